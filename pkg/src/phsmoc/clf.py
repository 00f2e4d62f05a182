"""Extended control-Lyapunov functions and CLF certificates for the Hamiltonian."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .system import PhsSystem

# Z_x membership threshold, relative to (1 + |dH/dx|)
ZX_TOL = 1e-8
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class BasisSet:
    """Basis functions ``Phi: R^n -> R^r`` with Jacobian ``grad_phi`` (r x n).

    ``exponents`` is set for monomial bases and used for serialization.
    """

    dim_r: int
    phi: Callable[[np.ndarray], np.ndarray]
    grad_phi: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    exponents: Optional[np.ndarray] = None
    grad_phi_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def jacobians(self, X: np.ndarray) -> np.ndarray:
        """``grad_phi`` at each row of ``X``, stacked to shape (k, r, n)."""
        if self.grad_phi_batch is not None:
            return self.grad_phi_batch(X)
        return np.array([self.grad_phi(x) for x in X])


def monomial_basis(exponents, name: str = "monomial") -> BasisSet:
    """Basis of monomials ``prod_j x_j ** exponents[i, j]``, one per row."""
    E = np.asarray(exponents, dtype=int)
    if E.ndim != 2 or E.shape[0] == 0:
        raise ValueError("exponents must be a nonempty 2-D table")
    if (E < 0).any():
        raise ValueError("exponents must be nonnegative")
    if (E.sum(axis=1) == 0).any():
        # a constant basis function breaks Phi(0) = 0
        raise ValueError("constant monomials are not allowed in a CLF basis")
    r, n = E.shape
    # lowered[j] = E with column j decremented (clipped at 0)
    lowered = np.repeat(E[None, :, :], n, axis=0)
    for j in range(n):
        lowered[j, :, j] = np.maximum(lowered[j, :, j] - 1, 0)
    Ef = E.astype(float)

    def phi(x):
        return np.prod(np.power(x, E), axis=1)

    def grad_phi(x):
        return np.prod(np.power(x, lowered), axis=2).T * Ef

    def grad_phi_batch(X):
        return np.prod(np.power(X[:, None, None, :], lowered[None]), axis=3).transpose(0, 2, 1) * Ef

    return BasisSet(dim_r=r, phi=phi, grad_phi=grad_phi, name=name, exponents=E,
                    grad_phi_batch=grad_phi_batch)


NAMED_BASES = {
    "quadratic-2d": [[2, 0], [1, 1], [0, 2]],
    "quadratic-2d-wrong": [[2, 0], [1, 1], [0, 4]],
}


def named_basis(spec) -> BasisSet:
    """Resolve a basis name or an explicit list of exponent tuples."""
    if isinstance(spec, str):
        if spec not in NAMED_BASES:
            raise ValueError(f"unknown basis {spec!r}; choose from {sorted(NAMED_BASES)}")
        return monomial_basis(NAMED_BASES[spec], name=spec)
    return monomial_basis(spec)


@dataclass(frozen=True)
class ExtendedClf:
    """``V(x, w) = H(x) + w^T Phi(x)`` built on a system's Hamiltonian."""

    system: PhsSystem
    basis: BasisSet

    def _check(self, x, w):
        x = self.system.check_state(x)
        w = np.asarray(w, dtype=float)
        if w.shape != (self.basis.dim_r,):
            raise ValueError(f"weights must have shape ({self.basis.dim_r},), got {w.shape}")
        return x, w

    def value(self, x, w) -> float:
        return float(self.system.H(x) + w @ self.basis.phi(x))

    def gradient(self, x, w) -> np.ndarray:
        return self.system.gradH(x) + self.basis.grad_phi(x).T @ w


def clf_value(clf: ExtendedClf, x, w) -> float:
    """``H(x) + w^T Phi(x)``."""
    x, w = clf._check(x, w)
    return clf.value(x, w)


def clf_gradient(clf: ExtendedClf, x, w) -> np.ndarray:
    """``dH/dx + (dPhi/dx)^T w``."""
    x, w = clf._check(x, w)
    return clf.gradient(x, w)


@dataclass
class Certificate:
    """PASS/FAIL outcome of a sampled or algebraic CLF test."""

    name: str
    passed: bool
    witnesses: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "result": "PASS" if self.passed else "FAIL",
            "witnesses": [np.asarray(wt).tolist() for wt in self.witnesses],
            "details": self.details,
        }


def _numeric_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    sv = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int((sv > rtol * sv[0]).sum())


def certify_rank_R(sys: PhsSystem, samples) -> Certificate:
    """Full rank of R(x) at every sample, a sufficient condition for H to be a CLF."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("need at least one sample state")
    failing = [x for x in samples if _numeric_rank(sys.R(x)) < sys.dim_x]
    return Certificate("rank_R", not failing, failing,
                       {"n_samples": int(samples.shape[0]), "n_failing": len(failing)})


def _null_space(M: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    M = np.atleast_2d(M)
    _, sv, Vt = np.linalg.svd(M)
    if sv.size == 0 or sv[0] == 0.0:
        return np.eye(M.shape[1])
    rank = int((sv > rtol * sv[0]).sum())
    return Vt[rank:].T


def certify_linear_kernel(Jc, Rc, Gc, Qc) -> Certificate:
    """Exact CLF test for linear systems with ``H = 1/2 x^T Q x``.

    Passes iff ``ker(G^T Q)`` and ``ker(Q^T R Q)`` intersect only in the
    origin, decided by the smallest principal angle between the two kernels.
    ``Jc`` does not enter the condition but is accepted for a uniform call.
    """
    Qc = np.atleast_2d(np.asarray(Qc, dtype=float))
    Rc = np.atleast_2d(np.asarray(Rc, dtype=float))
    Gc = np.asarray(Gc, dtype=float).reshape(Qc.shape[0], -1)
    if not np.allclose(Qc, Qc.T) or np.linalg.eigvalsh(Qc).min() <= 0:
        raise ValueError("Qc must be symmetric positive definite")
    ker_g = _null_space(Gc.T @ Qc)
    ker_r = _null_space(Qc.T @ Rc @ Qc)
    details = {"dim_ker_GtQ": int(ker_g.shape[1]), "dim_ker_QtRQ": int(ker_r.shape[1])}
    if ker_g.shape[1] == 0 or ker_r.shape[1] == 0:
        return Certificate("linear_kernel", True, [], details)
    U, cosines, _ = np.linalg.svd(ker_g.T @ ker_r)
    details["max_cosine"] = float(cosines[0])
    if cosines[0] >= 1.0 - 1e-10:
        return Certificate("linear_kernel", False, [ker_g @ U[:, 0]], details)
    return Certificate("linear_kernel", True, [], details)


def zsd_probe_states(sys: PhsSystem, samples) -> np.ndarray:
    """Extra samples projected onto ``ker G(x)^T``.

    Random samples hit the measure-zero set ``G^T dH/dx = 0`` with probability
    zero; for quadratic Hamiltonians these projections land on it exactly.
    """
    out = []
    for x in np.atleast_2d(samples):
        G = sys.G(x)
        out.append(x - G @ np.linalg.pinv(G) @ x)
    return np.array(out)


def certify_zsd_sampled(sys: PhsSystem, samples, tol: float = ZX_TOL) -> Certificate:
    """Sampled check of ``dH^T R dH > 0`` on the near-kernel set of the passive output.

    A sample belongs to the set when ``|G^T dH/dx| <= tol (1 + |dH/dx|)`` and
    ``x != 0``. An empty subset passes vacuously.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("need at least one sample state")
    witnesses = []
    n_kernel = 0
    for x in samples:
        if not np.any(x):
            continue
        g = sys.gradH(x)
        if np.linalg.norm(sys.G(x).T @ g) > tol * (1.0 + np.linalg.norm(g)):
            continue
        n_kernel += 1
        R = sys.R(x)
        if not g @ R @ g > 1e-12 * (g @ g) * max(1.0, np.linalg.norm(R)):
            witnesses.append(x)
    return Certificate("zsd_sampled", not witnesses, witnesses,
                       {"n_samples": int(samples.shape[0]), "n_near_kernel": n_kernel})


def psd_kernel_membership(M, x, tol: float = 1e-6) -> bool:
    """True iff ``|M x| <= tol |M| |x|`` for symmetric PSD ``M``.

    For PSD matrices ``x^T M x = 0`` exactly when ``M x = 0``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    x = np.asarray(x, dtype=float)
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12 * (1.0 + np.abs(M).max())):
        raise ValueError("M must be symmetric")
    return bool(np.linalg.norm(M @ x) <= tol * np.linalg.norm(M, 2) * np.linalg.norm(x))
