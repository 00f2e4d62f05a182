"""Closed-loop simulation of the adaptive controller.

The augmented state ``(x, w)`` is integrated with fixed-step classical RK4.
Impulsive disturbances are applied as state jumps between steps; the row
recorded at an impulse time holds the pre-jump state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adaptation import ShiftSet, _weight_rhs, convexity_diagnostic
from .clf import BasisSet, ExtendedClf
from .moc import ClfViolationError, MocScalars, evaluate_law, upsilon
from .system import DisturbanceImpulse, PhsSystem

# numpy < 2 only has trapz
_trapezoid = getattr(np, "trapezoid", None) or np.trapz

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """Integration aborted; ``time`` and ``state`` locate the failure."""

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = state


@dataclass
class Scenario:
    """Runtime description of one closed-loop experiment."""

    system: PhsSystem
    basis: BasisSet
    shifts: ShiftSet
    x0: np.ndarray
    w0: Optional[np.ndarray] = None
    horizon: float = 12.0
    step: float = 1e-3
    disturbances: list = field(default_factory=list)
    reference_weights: Optional[np.ndarray] = None
    reference_basis: Optional[BasisSet] = None
    name: str = "scenario"

    def __post_init__(self):
        self.x0 = self.system.check_state(self.x0)
        r = self.basis.dim_r
        self.w0 = np.zeros(r) if self.w0 is None else np.asarray(self.w0, dtype=float)
        if self.w0.shape != (r,):
            raise ValueError(f"w0 must have length r={r}")
        if not (self.step > 0 and self.horizon > 0 and self.step < self.horizon):
            raise ValueError("need 0 < step < horizon")
        self.shifts.check(self.system.dim_x, r)
        for d in self.disturbances:
            if d.jump.shape != (self.system.dim_x,):
                raise ValueError("disturbance jump length must equal dim_x")
            if d.time > self.horizon:
                raise ValueError(f"disturbance at t={d.time} lies beyond the horizon")

    @property
    def clf(self) -> ExtendedClf:
        return ExtendedClf(self.system, self.basis)

    @property
    def reference_clf(self) -> ExtendedClf:
        return ExtendedClf(self.system, self.reference_basis or self.basis)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))


@dataclass
class Trajectory:
    """Uniformly sampled closed-loop record.

    ``wdot`` and ``jump_indices`` are kept for diagnostics but not exported.
    """

    t: np.ndarray
    x: np.ndarray
    w: np.ndarray
    u: np.ndarray
    upsilon: np.ndarray
    V: np.ndarray
    vdot: np.ndarray
    cost: np.ndarray
    wdot: np.ndarray
    jump_indices: list = field(default_factory=list)

    def __len__(self):
        return self.t.size

    def index_at(self, time: float) -> int:
        return int(np.argmin(np.abs(self.t - time)))

    def header(self) -> list:
        n, r, m = self.x.shape[1], self.w.shape[1], self.u.shape[1]
        return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"w{i + 1}" for i in range(r)]
                + [f"u{i + 1}" for i in range(m)] + ["upsilon", "V", "vdot", "cost"])

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.x, self.w, self.u, self.upsilon,
                                self.V, self.vdot, self.cost])

    def to_csv(self, path):
        np.savetxt(path, self.table(), fmt="%.9g", delimiter=",",
                   header=",".join(self.header()), comments="")


def rk4_step(f, z, h, k1=None):
    """One classical Runge-Kutta step; ``k1`` may be supplied if already known."""
    if k1 is None:
        k1 = f(z)
    k2 = f(z + 0.5 * h * k1)
    k3 = f(z + 0.5 * h * k2)
    k4 = f(z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _jump_schedule(scn: Scenario) -> dict:
    schedule = {}
    for d in scn.disturbances:
        k = int(round(d.time / scn.step))
        if abs(k * scn.step - d.time) > 1e-9 * max(1.0, d.time):
            logger.warning("impulse at t=%g snapped to grid time %g", d.time, k * scn.step)
        schedule[k] = schedule.get(k, 0.0) + d.jump
    return schedule


def _integrate(scn: Scenario, law, adapt: bool) -> Trajectory:
    """Shared RK4 loop. ``law(x, w)`` returns ``(u, upsilon, vdot)``."""
    sys, clf = scn.system, scn.clf if adapt else scn.reference_clf
    n, r = sys.dim_x, clf.basis.dim_r
    N = scn.n_steps
    h = scn.step

    def wdot(x, w):
        return _weight_rhs(sys, clf, scn.shifts, x, w) if adapt else np.zeros(r)

    def rhs(z):
        x, w = z[:n], z[n:]
        u = law(x, w)[0]
        return np.concatenate([sys.drift(x) + sys.G(x) @ u, wdot(x, w)])

    t = np.arange(N + 1) * h
    X = np.empty((N + 1, n))
    W = np.empty((N + 1, r))
    U = np.empty((N + 1, sys.dim_u))
    Ups = np.empty(N + 1)
    V = np.empty(N + 1)
    Vd = np.empty(N + 1)
    C = np.zeros(N + 1)
    Wd = np.empty((N + 1, r))
    schedule = _jump_schedule(scn)

    def running_cost(x, u):
        return 0.5 * (sys.cost_r(x) + u @ sys.cost_S @ u)

    z = np.concatenate([scn.x0, scn.w0 if adapt else scn.reference_weights])
    left = 0.0
    for k in range(N + 1):
        x, w = z[:n], z[n:]
        try:
            u, ups, vd = law(x, w)
        except ClfViolationError as exc:
            raise SimulationError(f"t={t[k]:.6g}: {exc}", t[k], x.copy()) from exc
        wd = wdot(x, w)
        X[k], W[k], U[k], Ups[k], Vd[k], Wd[k] = x, w, u, ups, vd, wd
        V[k] = clf.value(x, w)
        L = running_cost(x, u)
        if k > 0:
            # trapezoid; left end uses the post-jump state when a jump occurred
            C[k] = C[k - 1] + 0.5 * h * (left + L)
        if k == N:
            break
        if k in schedule:
            z = z.copy()
            z[:n] += schedule[k]
            x, w = z[:n], z[n:]
            try:
                u = law(x, w)[0]
            except ClfViolationError as exc:
                raise SimulationError(f"t={t[k]:.6g}: {exc}", t[k], x.copy()) from exc
            wd = wdot(x, w)
            L = running_cost(x, u)
        left = L
        k1 = np.concatenate([sys.drift(x) + sys.G(x) @ u, wd])
        try:
            z = rk4_step(rhs, z, h, k1)
        except ClfViolationError as exc:
            raise SimulationError(f"t={t[k]:.6g}: {exc}", t[k], z[:n].copy()) from exc
        if not np.isfinite(z).all():
            raise SimulationError(f"non-finite state after t={t[k]:.6g}", t[k], z[:n].copy())

    return Trajectory(t, X, W, U, Ups, V, Vd, C, Wd, sorted(schedule))


def simulate(scn: Scenario) -> Trajectory:
    """Integrate the adaptive closed loop from ``(x0, w0)``.

    ``x' = (J - R) dH + G u(x, w)`` with the modified optimal law, and
    ``w' = weight_rhs(x, w)``. The convexity diagnostic is run at ``(x0, w0)``
    and only warns.
    """
    sys, clf = scn.system, scn.clf
    diag = convexity_diagnostic(sys, clf, scn.shifts, scn.x0, scn.w0)
    if not diag.passed:
        logger.warning("%s: shift vectors have rank %d < r=%d at (x0, w0)",
                       scn.name, diag.rank, diag.dim_r)
    elif diag.min_eig_hessian <= 0:
        logger.warning("%s: objective Hessian is not positive definite at w0", scn.name)

    def law(x, w):
        pt = evaluate_law(sys, clf, x, w)
        return pt.u, pt.upsilon, pt.vdot

    return _integrate(scn, law, adapt=True)


def simulate_reference(scn: Scenario, weights=None) -> Trajectory:
    """Integrate the non-adaptive law ``u = -S^-1 G^T dV/dx`` at frozen weights.

    Uses ``scn.reference_basis`` when set. The ``upsilon`` column holds the
    multiplier the modified law would have used (NaN where undefined) and
    ``vdot`` the exact ``dV/dt = f - s`` of the frozen-weight closed loop.
    """
    if weights is not None:
        scn = Scenario(**{**scn.__dict__, "reference_weights": np.asarray(weights, dtype=float)})
    if scn.reference_weights is None:
        raise ValueError("simulate_reference needs fixed weights")
    sys, clf = scn.system, scn.reference_clf
    if scn.reference_weights.shape != (clf.basis.dim_r,):
        raise ValueError("reference weights do not match the reference basis")

    def law(x, w):
        grad_V = clf.gradient(x, w)
        GtV = sys.G(x).T @ grad_V
        s = float(GtV @ sys.S_inv @ GtV)
        f = float(grad_V @ sys.drift(x))
        try:
            ups = upsilon(MocScalars(f, s, float(sys.cost_r(x))))
        except ClfViolationError:
            ups = float("nan")
        return -(sys.S_inv @ GtV), ups, f - s

    return _integrate(scn, law, adapt=False)


@dataclass
class ComparisonReport:
    """Differences between two trajectories over ``[t_from, horizon]``."""

    t_from: float
    x_sup: float
    x_l2: float
    upsilon_dev: float
    w_terminal_dist: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def compare(traj_a: Trajectory, traj_b: Trajectory, t_from: float = 0.0) -> ComparisonReport:
    """Sup-norm and L2 state difference, max ``|upsilon_a - 1|`` and terminal weight gap."""
    if traj_a.t.shape != traj_b.t.shape or not np.allclose(traj_a.t, traj_b.t, rtol=0, atol=1e-12):
        raise ValueError("trajectories are sampled on different grids")
    mask = traj_a.t >= t_from - 1e-12
    dx = traj_a.x[mask] - traj_b.x[mask]
    err = np.linalg.norm(dx, axis=1)
    tt = traj_a.t[mask]
    l2 = float(np.sqrt(_trapezoid(err ** 2, tt))) if tt.size > 1 else 0.0
    ups = traj_a.upsilon[mask]
    return ComparisonReport(
        t_from=float(t_from),
        x_sup=float(err.max()) if err.size else 0.0,
        x_l2=l2,
        upsilon_dev=float(np.nanmax(np.abs(ups - 1.0))) if ups.size else 0.0,
        w_terminal_dist=(float(np.linalg.norm(traj_a.w[-1] - traj_b.w[-1]))
                         if traj_a.w.shape == traj_b.w.shape else float("nan")),
    )
