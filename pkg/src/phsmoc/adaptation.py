"""Online learning of the value-function weights.

For a frozen state the optimality condition ``s - 2 f - q = 0`` is a quadric
``Q(x, w) = w^T A w + a^T w + a0`` in the weights. Summing squared residuals
over shifted copies of the state gives an objective that is strictly convex
near the optimal weights; ``w`` follows its negative gradient (or a Newton
direction).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clf import ExtendedClf
from .system import PhsSystem

logger = logging.getLogger(__name__)

METHODS = ("gradient", "newton", "newton-pseudoinverse")
NEWTON_MAX_COND = 1e12
PINV_RTOL = 1e-10


@dataclass(frozen=True)
class QuadricCoefficients:
    """``Q(w) = w^T A w + a_lin^T w + a_const`` at one frozen state."""

    A: np.ndarray
    a_lin: np.ndarray
    a_const: float

    def value(self, w) -> float:
        return float(w @ self.A @ w + self.a_lin @ w + self.a_const)

    def gradient(self, w) -> np.ndarray:
        return 2.0 * self.A @ w + self.a_lin


@dataclass(frozen=True)
class ShiftSet:
    """State offsets ``c_i``, learning rate and descent method."""

    shifts: np.ndarray
    learning_rate: float
    method: str = "gradient"

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.shifts, dtype=float))
        if C.shape[0] == 0:
            raise ValueError("need at least one shift")
        if not np.isfinite(C).all():
            raise ValueError("shifts must be finite")
        object.__setattr__(self, "shifts", C)
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if np.any(C[0]):
            logger.warning("first shift is %s; the convention is c_1 = 0", C[0].tolist())

    def check(self, dim_x: int, dim_r: int):
        if self.shifts.shape[1] != dim_x:
            raise ValueError(f"shifts must have {dim_x} columns")
        if self.shifts.shape[0] < dim_r:
            raise ValueError(f"need at least r={dim_r} shifts for strict convexity, "
                             f"got {self.shifts.shape[0]}")


def _quadric_batch(sys: PhsSystem, clf: ExtendedClf, X: np.ndarray):
    """Stacked quadric coefficients ``(A, a_lin, a_const)`` for the rows of ``X``."""
    Phi_x = clf.basis.jacobians(X)
    G = np.array([sys.G(x) for x in X])
    g = np.array([sys.gradH(x) for x in X])
    D = np.array([sys.J(x) - sys.R(x) for x in X])
    r_cost = np.array([sys.cost_r(x) for x in X])
    Dg = np.einsum("kij,kj->ki", D, g)
    Gtg = np.einsum("kji,kj->ki", G, g)
    SiGtg = Gtg @ sys.S_inv.T
    M = Phi_x @ G
    A = M @ sys.S_inv @ M.transpose(0, 2, 1)
    a_lin = 2.0 * (np.einsum("kij,kj->ki", M, SiGtg) - np.einsum("kij,kj->ki", Phi_x, Dg))
    a_const = np.einsum("ki,ki->k", Gtg, SiGtg) - 2.0 * np.einsum("ki,ki->k", g, Dg) - r_cost
    return A, a_lin, a_const


def _quadric(sys: PhsSystem, clf: ExtendedClf, x) -> QuadricCoefficients:
    A, a_lin, a_const = _quadric_batch(sys, clf, x[None, :])
    return QuadricCoefficients(A[0], a_lin[0], float(a_const[0]))


def quadric_at(sys: PhsSystem, clf: ExtendedClf, x) -> QuadricCoefficients:
    """Quadric coefficients at the frozen state ``x``.

    ``A = Phi_x K Phi_x^T``, ``a_lin = 2 (Phi_x K dH - Phi_x (J - R) dH)``,
    ``a_const = dH^T K dH - 2 dH^T (J - R) dH - r(x)`` with ``K = G S^-1 G^T``.
    """
    x = sys.check_state(x)
    return _quadric(sys, clf, x)


def quadric_value(qc: QuadricCoefficients, w) -> float:
    w = np.asarray(w, dtype=float)
    if w.shape != qc.a_lin.shape:
        raise ValueError(f"weights must have shape {qc.a_lin.shape}, got {w.shape}")
    return qc.value(w)


def _terms(sys, clf, shifts: ShiftSet, x, w):
    """Stacked ``A_i``, residuals ``Q_i`` and gradients ``2 A_i w + a_i`` over the shifts."""
    A, a_lin, a_const = _quadric_batch(sys, clf, x + shifts.shifts)
    Aw = A @ w
    residuals = Aw @ w + a_lin @ w + a_const
    grads = 2.0 * Aw + a_lin
    return A, residuals, grads


def _check_args(sys, clf, shifts, x, w):
    x, w = clf._check(x, w)
    shifts.check(sys.dim_x, clf.basis.dim_r)
    return x, w


def jw_value(sys: PhsSystem, clf: ExtendedClf, shifts: ShiftSet, x, w) -> float:
    """``sum_i Q(x + c_i, w)^2``."""
    x, w = _check_args(sys, clf, shifts, x, w)
    _, res, _ = _terms(sys, clf, shifts, x, w)
    return float(res @ res)


def jw_gradient(sys: PhsSystem, clf: ExtendedClf, shifts: ShiftSet, x, w) -> np.ndarray:
    """``sum_i 2 Q_i (2 A_i w + a_i)``."""
    x, w = _check_args(sys, clf, shifts, x, w)
    _, res, grads = _terms(sys, clf, shifts, x, w)
    return 2.0 * res @ grads


def _hessian(A, res, grads):
    return 2.0 * grads.T @ grads + 4.0 * np.einsum("k,kij->ij", res, A)


def jw_hessian(sys: PhsSystem, clf: ExtendedClf, shifts: ShiftSet, x, w) -> np.ndarray:
    """``sum_i [2 v_i v_i^T + 4 Q_i A_i]`` with ``v_i = 2 A_i w + a_i``."""
    x, w = _check_args(sys, clf, shifts, x, w)
    return _hessian(*_terms(sys, clf, shifts, x, w))


@dataclass
class DiagnosticReport:
    """Rank of the stacked ``v_i`` and the smallest Hessian eigenvalue."""

    rank: int
    dim_r: int
    min_eig_hessian: float
    vectors: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.rank == self.dim_r

    def as_dict(self) -> dict:
        return {"name": "convexity", "result": "PASS" if self.passed else "FAIL",
                "rank": self.rank, "dim_r": self.dim_r,
                "min_eig_hessian": self.min_eig_hessian}


def convexity_diagnostic(sys: PhsSystem, clf: ExtendedClf, shifts: ShiftSet, x, w_ref) -> DiagnosticReport:
    """Check linear independence of ``v_i = 2 A(x + c_i) w_ref + a(x + c_i)``."""
    x, w_ref = clf._check(x, w_ref)
    A, res, grads = _terms(sys, clf, shifts, x, w_ref)
    sv = np.linalg.svd(grads, compute_uv=False)
    rank = 0 if sv[0] == 0.0 else int((sv > PINV_RTOL * sv[0]).sum())
    Hs = _hessian(A, res, grads)
    return DiagnosticReport(rank, clf.basis.dim_r, float(np.linalg.eigvalsh(Hs).min()), grads)


def _weight_rhs(sys, clf, shifts: ShiftSet, x, w) -> np.ndarray:
    A, res, grads = _terms(sys, clf, shifts, x, w)
    grad = 2.0 * res @ grads
    alpha = shifts.learning_rate
    if shifts.method == "gradient":
        return -alpha * grad
    Hs = _hessian(A, res, grads)
    if shifts.method == "newton":
        if np.linalg.cond(Hs) <= NEWTON_MAX_COND:
            return -alpha * np.linalg.solve(Hs, grad)
        logger.debug("Hessian condition number above %.0e; using pseudoinverse", NEWTON_MAX_COND)
    return -alpha * np.linalg.pinv(Hs, rcond=PINV_RTOL, hermitian=True) @ grad


def weight_rhs(sys: PhsSystem, clf: ExtendedClf, shifts: ShiftSet, x, w) -> np.ndarray:
    """Right-hand side of the weight adaptation ``w' = -alpha * direction``.

    ``gradient`` uses ``dJ_w/dw``; ``newton`` solves with the Hessian and falls
    back to the truncated pseudoinverse when the condition number exceeds 1e12;
    ``newton-pseudoinverse`` always uses it.
    """
    x, w = _check_args(sys, clf, shifts, x, w)
    return _weight_rhs(sys, clf, shifts, x, w)
