"""Input-state-output port-Hamiltonian systems.

A system is ``x' = (J(x) - R(x)) dH/dx + G(x) u`` with passive output
``y = G(x)^T dH/dx``, paired with the running cost ``1/2 (r(x) + u^T S u)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

logger = logging.getLogger(__name__)

MatrixFn = Callable[[np.ndarray], np.ndarray]
ScalarFn = Callable[[np.ndarray], float]

# relative slack for symmetric eigensolver noise
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class PhsSystem:
    """An ISO-PHS together with its quadratic-in-input cost.

    Parameters
    ----------
    dim_x, dim_u : int
        State and input dimensions.
    J, R, G : callable
        State-dependent interconnection (n x n, skew), dissipation (n x n, PSD)
        and input (n x m) matrices.
    H, gradH : callable
        Hamiltonian and its gradient.
    cost_r : callable
        State cost, positive off the origin.
    cost_S : ndarray
        Constant positive-definite input weight (m x m).
    name : str
        Label used in reports.
    """

    dim_x: int
    dim_u: int
    J: MatrixFn
    R: MatrixFn
    G: MatrixFn
    H: ScalarFn
    gradH: MatrixFn
    cost_r: ScalarFn
    cost_S: np.ndarray
    name: str = "custom"
    S_inv: np.ndarray = field(init=False, repr=False)
    S_inv_norm: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_u < 1:
            raise ValueError("dim_x and dim_u must be positive")
        S = np.atleast_2d(np.asarray(self.cost_S, dtype=float))
        if S.shape != (self.dim_u, self.dim_u):
            raise ValueError(f"cost_S must be {self.dim_u}x{self.dim_u}, got {S.shape}")
        if not np.allclose(S, S.T):
            raise ValueError("cost_S must be symmetric")
        if np.linalg.eigvalsh(S).min() <= 0.0:
            raise ValueError("cost_S must be positive definite")
        object.__setattr__(self, "cost_S", S)
        object.__setattr__(self, "S_inv", np.linalg.inv(S))
        object.__setattr__(self, "S_inv_norm", float(np.linalg.norm(self.S_inv)))

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim_x,):
            raise ValueError(f"state must have shape ({self.dim_x},), got {x.shape}")
        return x

    def check_input(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (self.dim_u,):
            raise ValueError(f"input must have shape ({self.dim_u},), got {u.shape}")
        return u

    def drift(self, x: np.ndarray) -> np.ndarray:
        """Unforced vector field ``(J - R) dH/dx`` (no dimension checks)."""
        return (self.J(x) - self.R(x)) @ self.gradH(x)

    def input_kernel(self, x: np.ndarray) -> np.ndarray:
        """``K(x) = G S^-1 G^T``."""
        G = self.G(x)
        return G @ self.S_inv @ G.T


@dataclass(frozen=True)
class DisturbanceImpulse:
    """Instantaneous state increment ``x <- x + jump`` at ``time``."""

    time: float
    jump: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time < 0:
            raise ValueError("impulse time must be a nonnegative finite number")
        object.__setattr__(self, "jump", np.asarray(self.jump, dtype=float).ravel())


def evaluate_dynamics(sys: PhsSystem, x, u) -> np.ndarray:
    """Return ``(J(x) - R(x)) dH/dx + G(x) u``."""
    x = sys.check_state(x)
    u = sys.check_input(u)
    return sys.drift(x) + sys.G(x) @ u


def passive_output(sys: PhsSystem, x) -> np.ndarray:
    """Return ``y = G(x)^T dH/dx``."""
    x = sys.check_state(x)
    return sys.G(x).T @ sys.gradH(x)


def sample_box(dim: int, count: int = 100, half_width: float = 2.0, seed: int = 0) -> np.ndarray:
    """Uniform samples in ``[-half_width, half_width]^dim``, one per row."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-half_width, half_width, size=(count, dim))


def min_eig_ok(M: np.ndarray, strict: bool = False) -> bool:
    sym = 0.5 * (M + M.T)
    lam = np.linalg.eigvalsh(sym).min()
    slack = PSD_RTOL * (1.0 + np.linalg.norm(M))
    return lam > slack if strict else lam >= -slack


@dataclass
class ValidationReport:
    """Outcome of sample-based structural checks; ``violations`` holds messages."""

    n_samples: int
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def _fail(self, check: str, message: str):
        self.checks[check] = False
        self.violations.append(f"{check}: {message}")


def validate_structure(sys: PhsSystem, sample_states, tol: float = 1e-10,
                       fd_rtol: float = 1e-5) -> ValidationReport:
    """Check the standing structural assumptions at the given samples.

    Covers skew-symmetry of J, PSD-ness of R, PD-ness of S, positivity of r
    off the origin, ``H(0) = 0``, ``dH/dx(0) = 0`` and agreement of ``gradH``
    with central differences of ``H``. Violations are collected, never raised.
    """
    samples = np.atleast_2d(np.asarray(sample_states, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("need at least one sample state")
    report = ValidationReport(n_samples=samples.shape[0])
    for name in ("skew_J", "psd_R", "pd_S", "positive_r", "origin", "gradH_fd"):
        report.checks[name] = True

    if not min_eig_ok(sys.cost_S, strict=True):
        report._fail("pd_S", "cost_S is not positive definite")

    zero = np.zeros(sys.dim_x)
    if abs(sys.H(zero)) > tol:
        report._fail("origin", f"H(0) = {sys.H(zero):.3e}")
    if np.linalg.norm(sys.gradH(zero)) > tol:
        report._fail("origin", "gradH(0) != 0")

    from .oracles import fd_check  # local import: oracles depends on this module

    for x in samples:
        J = sys.J(x)
        if np.linalg.norm(J + J.T) > tol * (1.0 + np.linalg.norm(J)):
            report._fail("skew_J", f"J not skew at x={x.tolist()}")
        if not min_eig_ok(sys.R(x)):
            report._fail("psd_R", f"R not PSD at x={x.tolist()}")
        if np.linalg.norm(x) > 0 and not sys.cost_r(x) > 0:
            report._fail("positive_r", f"r(x)={sys.cost_r(x):.3e} at x={x.tolist()}")
        fd = fd_check(sys.H, x, analytic=sys.gradH(x))
        if fd.rel_error > fd_rtol:
            report._fail("gradH_fd", f"rel. error {fd.rel_error:.2e} at x={x.tolist()}")

    if report.violations:
        logger.warning("%s: %d structural violations", sys.name, len(report.violations))
    return report


# --- built-in systems -------------------------------------------------------

def _quadratic_energy(x):
    return 0.5 * float(x @ x)


def _identity_grad(x):
    return np.array(x, dtype=float)


def linear_example() -> PhsSystem:
    """Two-state linear system with ``R = I`` and cost ``x^T diag(100, 1) x + u^2``."""
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    R = np.eye(2)
    G = np.array([[1.0], [0.0]])
    return PhsSystem(
        dim_x=2, dim_u=1,
        J=lambda x: J, R=lambda x: R, G=lambda x: G,
        H=_quadratic_energy, gradH=_identity_grad,
        cost_r=lambda x: 100.0 * x[0] ** 2 + x[1] ** 2,
        cost_S=np.eye(1),
        name="linear-example",
    )


def nonlinear_example() -> PhsSystem:
    """Two-state system with state-dependent damping and input map ``[x2, 0]^T``."""
    J = np.array([[0.0, 3.0], [-3.0, 0.0]])

    def R(x):
        return np.array([[1.0 + x[1] ** 2, 1.0], [1.0, 2.0]])

    def G(x):
        return np.array([[x[1]], [0.0]])

    def cost_r(x):
        return (8.0 + 8.0 * x[0] + 16.0 * x[1]) * x[0] ** 2 + 8.0 * x[1] ** 2

    return PhsSystem(
        dim_x=2, dim_u=1,
        J=lambda x: J, R=R, G=G,
        H=_quadratic_energy, gradH=_identity_grad,
        cost_r=cost_r,
        cost_S=np.eye(1),
        name="nonlinear-example",
    )


BUILTIN_SYSTEMS = {
    "linear-example": linear_example,
    "nonlinear-example": nonlinear_example,
}


def builtin_system(name: str) -> PhsSystem:
    try:
        return BUILTIN_SYSTEMS[name]()
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(BUILTIN_SYSTEMS)}") from None
