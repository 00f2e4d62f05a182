"""Independent reference computations.

Newton-Kleinman for the algebraic Riccati equation, the HJB residual of a
candidate value function, and central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .clf import ExtendedClf
from .system import PhsSystem


class RiccatiError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


@dataclass
class RiccatiSolution:
    """Stabilizing ARE solution ``P`` and the matching quadratic-basis weights."""

    P: np.ndarray
    w_star: Optional[np.ndarray]
    iterations: int
    residual: float
    history: list = field(default_factory=list, repr=False)


def solve_lyapunov(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve ``A^T P + P A + Q = 0`` through its Kronecker form."""
    n = A.shape[0]
    I = np.eye(n)
    L = np.kron(I, A.T) + np.kron(A.T, I)
    P = np.linalg.solve(L, -Q.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (P + P.T)


def _is_hurwitz(A: np.ndarray) -> bool:
    return bool(np.linalg.eigvals(A).real.max() < 0.0)


def _is_stabilizable(A: np.ndarray, B: np.ndarray) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= 0.0:
            M = np.hstack([A - lam * np.eye(n), B.astype(complex)])
            if np.linalg.matrix_rank(M, tol=1e-10 * max(1.0, np.linalg.norm(M))) < n:
                return False
    return True


def _initial_gain(A, B, S_inv):
    """Zero gain for Hurwitz ``A``; otherwise a Bass-type shifted Lyapunov gain."""
    m = B.shape[1]
    if _is_hurwitz(A):
        return np.zeros((m, A.shape[0]))
    beta = 1.0 + max(0.0, float(np.linalg.eigvals(A).real.max()))
    As = -(A + beta * np.eye(A.shape[0]))
    # Z solves (A + beta I) Z + Z (A + beta I)^T = 2 B S^-1 B^T
    Z = solve_lyapunov(As.T, 2.0 * B @ S_inv @ B.T)
    K0 = S_inv @ B.T @ np.linalg.inv(Z)
    if not _is_hurwitz(A - B @ K0):
        raise RiccatiError("could not construct a stabilizing initial gain")
    return K0


def quadratic_weights(P: np.ndarray, exponents, H_hessian: Optional[np.ndarray] = None) -> np.ndarray:
    """Weights of ``1/2 x^T (P - H_hessian) x`` on a degree-2 monomial basis."""
    n = P.shape[0]
    D = P - (np.eye(n) if H_hessian is None else H_hessian)
    w = []
    for e in np.asarray(exponents, dtype=int):
        idx = np.flatnonzero(e)
        if e.sum() != 2:
            raise ValueError("quadratic_weights needs a degree-2 monomial basis")
        if idx.size == 1:
            w.append(0.5 * D[idx[0], idx[0]])
        else:
            w.append(D[idx[0], idx[1]])
    return np.array(w)


def quadratic_exponents(n: int) -> np.ndarray:
    """All degree-2 monomials in lexicographic order (``x1^2, x1 x2, x2^2`` for n=2)."""
    rows = []
    for i in range(n):
        for j in range(i, n):
            e = np.zeros(n, dtype=int)
            e[i] += 1
            e[j] += 1
            rows.append(e)
    return np.array(rows)


def solve_riccati(A, B, Q_cost, S, tol: float = 1e-12, max_iter: int = 100,
                  K0=None, H_hessian=None) -> RiccatiSolution:
    """Stabilizing solution of ``A^T P + P A - P B S^-1 B^T P + Q = 0``.

    Newton-Kleinman iteration: each step solves a Lyapunov equation for the
    current closed loop ``A - B K`` and updates ``K = S^-1 B^T P``. The value
    function is ``1/2 x^T P x``; ``w_star`` maps it onto the quadratic monomial
    basis after removing the Hamiltonian ``1/2 x^T H_hessian x`` (identity by
    default).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    Q = np.atleast_2d(np.asarray(Q_cost, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if np.linalg.eigvalsh(0.5 * (S + S.T)).min() <= 0:
        raise ValueError("S must be positive definite")
    if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12 * (1.0 + np.linalg.norm(Q)):
        raise ValueError("Q_cost must be positive semidefinite")
    if not _is_stabilizable(A, B):
        raise RiccatiError("(A, B) is not stabilizable")
    S_inv = np.linalg.inv(S)
    K = _initial_gain(A, B, S_inv) if K0 is None else np.atleast_2d(np.asarray(K0, dtype=float))
    if not _is_hurwitz(A - B @ K):
        raise RiccatiError("initial gain is not stabilizing")

    def are_residual(P):
        return float(np.linalg.norm(A.T @ P + P @ A - P @ B @ S_inv @ B.T @ P + Q))

    P_prev = None
    history = []
    for it in range(1, max_iter + 1):
        Ak = A - B @ K
        P = solve_lyapunov(Ak, Q + K.T @ S @ K)
        history.append(are_residual(P))
        if not np.isfinite(P).all():
            raise RiccatiError("Newton-Kleinman iteration diverged", history)
        K = S_inv @ B.T @ P
        if P_prev is not None and np.linalg.norm(P - P_prev) <= tol * (1.0 + np.linalg.norm(P)):
            break
        P_prev = P
    else:
        raise RiccatiError(f"no convergence in {max_iter} iterations", history)

    w_star = quadratic_weights(P, quadratic_exponents(n), H_hessian)
    return RiccatiSolution(P, w_star, it, history[-1], history)


def hjbe_residual(sys: PhsSystem, clf: ExtendedClf, x, w) -> float:
    """``1/2 q - 1/2 s + f``; zero iff ``V(., w)`` satisfies the HJB equation at ``x``."""
    from .moc import moc_scalars

    sc = moc_scalars(sys, clf, x, w)
    return 0.5 * sc.q_ups - 0.5 * sc.s_ups + sc.f_ups


@dataclass
class FdReport:
    """Central-difference derivative and its distance from an analytic one."""

    fd: np.ndarray
    analytic: Optional[np.ndarray]
    abs_error: float
    rel_error: float


def fd_derivative(fn: Callable, point, h: Optional[float] = None) -> np.ndarray:
    """Central-difference gradient (scalar ``fn``) or Jacobian (vector ``fn``)."""
    p = np.asarray(point, dtype=float)
    if h is None:
        h = 1e-5 * (1.0 + np.linalg.norm(p))
    if not h > 0:
        raise ValueError("step h must be positive")
    cols = []
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = h
        cols.append((np.asarray(fn(p + e), dtype=float) - np.asarray(fn(p - e), dtype=float)) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_check(fn: Callable, point, h: Optional[float] = None, analytic=None) -> FdReport:
    """Compare a central-difference derivative of ``fn`` at ``point`` with ``analytic``.

    ``analytic`` may be an array or a callable evaluated at ``point``. The
    relative error is taken against the larger of the two norms.
    """
    fd = fd_derivative(fn, point, h)
    if analytic is None:
        return FdReport(fd, None, float("nan"), float("nan"))
    an = np.asarray(analytic(point) if callable(analytic) else analytic, dtype=float).reshape(fd.shape)
    err = float(np.linalg.norm(fd - an))
    scale = max(np.linalg.norm(an), np.linalg.norm(fd))
    return FdReport(fd, an, err, err / scale if scale > 0 else 0.0)
