"""Modified optimal control law.

Projecting the dynamics onto ``dV/dx`` turns the infinite-horizon problem into
a scalar one whose Lagrange multiplier ``upsilon`` has a closed form. The law
is ``u = -S^-1 G^T dV/dx * upsilon``; ``upsilon == 1`` everywhere means ``V`` is
the value function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .clf import ExtendedClf
from .system import PhsSystem

# scale-aware threshold on s_ups, relative to |dV/dx|^2 |G S^-1 G^T|
DEGENERATE_RTOL = 1e-9


class ClfViolationError(ValueError):
    """The CLF condition fails at a state: no stabilizing multiplier exists."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = None if state is None else np.asarray(state, dtype=float)


@dataclass(frozen=True)
class MocScalars:
    """Scalar projections at one ``(x, w)``.

    f_ups = dV^T (J - R) dH, s_ups = dV^T G S^-1 G^T dV, q_ups = r(x).
    """

    f_ups: float
    s_ups: float
    q_ups: float


@dataclass(frozen=True)
class MocPoint:
    """Everything the closed loop needs at one ``(x, w)``."""

    scalars: MocScalars
    upsilon: float
    u: np.ndarray
    grad_V: np.ndarray
    vdot: float


def _scalars(sys: PhsSystem, clf: ExtendedClf, x, w):
    grad_V = clf.gradient(x, w)
    G = sys.G(x)
    GtV = G.T @ grad_V
    s = float(GtV @ sys.S_inv @ GtV)
    f = float(grad_V @ sys.drift(x))
    q = float(sys.cost_r(x))
    return MocScalars(f, s, q), grad_V, G, GtV


def moc_scalars(sys: PhsSystem, clf: ExtendedClf, x, w) -> MocScalars:
    """Evaluate ``(f_ups, s_ups, q_ups)`` at ``(x, w)``."""
    x, w = clf._check(x, w)
    return _scalars(sys, clf, x, w)[0]


def upsilon(scalars: MocScalars, eps: float = 0.0, state=None) -> float:
    """Positive root of ``1/2 q + ups f - 1/2 ups^2 s = 0``.

    For ``f < 0`` the root is evaluated as ``q / (sqrt(f^2 + q s) - f)``, which
    is algebraically the ``+`` root and reduces to ``-q / (2 f)`` at ``s = 0``,
    so the degenerate branch needs no switch. For ``f >= 0`` the root is
    ``(f + sqrt(f^2 + q s)) / s``; there ``s <= eps`` is the origin (``q <= eps``,
    returns 1 by convention) or a CLF violation.
    """
    f, s, q = scalars.f_ups, scalars.s_ups, scalars.q_ups
    disc = f * f + q * s
    if disc < 0.0:
        raise ClfViolationError(
            f"negative discriminant f^2 + q s = {disc:.3e} (state cost r(x) = {q:.3e} < 0)", state)
    root = math.sqrt(disc)
    if f < 0.0:
        return q / (root - f)
    if s > eps:
        return (f + root) / s
    if q <= eps:
        return 1.0
    raise ClfViolationError(
        f"CLF condition violated: s_ups={s:.3e}, f_ups={f:.3e} >= 0, q_ups={q:.3e}"
        + ("" if state is None else f" at x={np.asarray(state).tolist()}"), state)


def vdot_closed_form(scalars: MocScalars) -> float:
    """``-sqrt(f^2 + q s)``: the x-part of dV/dt under the MOC law."""
    return -math.sqrt(max(scalars.f_ups ** 2 + scalars.q_ups * scalars.s_ups, 0.0))


def degenerate_eps(sys: PhsSystem, G, grad_V) -> float:
    """Threshold for ``s_ups`` scaled by ``|dV/dx|^2 |G S^-1 G^T|`` (Frobenius bound)."""
    return DEGENERATE_RTOL * float(grad_V @ grad_V) * float(np.sum(G * G)) * sys.S_inv_norm


def evaluate_law(sys: PhsSystem, clf: ExtendedClf, x, w) -> MocPoint:
    """Scalars, multiplier, input and closed-form dV/dt in one pass (no checks)."""
    scalars, grad_V, G, GtV = _scalars(sys, clf, x, w)
    ups = upsilon(scalars, degenerate_eps(sys, G, grad_V), state=x)
    u = -(sys.S_inv @ GtV) * ups
    return MocPoint(scalars, ups, u, grad_V, vdot_closed_form(scalars))


def control(sys: PhsSystem, clf: ExtendedClf, x, w) -> np.ndarray:
    """``u = -S^-1 G(x)^T dV/dx * upsilon(x, w)``."""
    x, w = clf._check(x, w)
    return evaluate_law(sys, clf, x, w).u
