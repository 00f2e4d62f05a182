"""Scenario files: parsing, built-in experiments and the run pipeline.

A scenario file is YAML (or JSON) with the top-level keys listed in
``SCENARIO_KEYS``. Unknown keys are rejected and every number must be finite.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .adaptation import METHODS, ShiftSet, convexity_diagnostic
from .clf import (
    Certificate,
    certify_linear_kernel,
    certify_rank_R,
    certify_zsd_sampled,
    named_basis,
    zsd_probe_states,
)
from .oracles import quadratic_weights, solve_riccati
from .polynomial import system_from_tables
from .simulator import Scenario, Trajectory, compare, simulate, simulate_reference
from .system import DisturbanceImpulse, PhsSystem, builtin_system, sample_box, validate_structure

logger = logging.getLogger(__name__)

SCENARIO_KEYS = {
    "name", "system", "basis", "shifts", "alpha", "method", "x0", "w0", "horizon",
    "step", "disturbances", "oracle", "outputs", "sample_box", "samples", "seed",
}
REQUIRED_KEYS = {"system", "basis", "shifts", "alpha", "x0"}
ORACLE_KEYS = {"type", "weights", "basis"}
OUTPUT_KEYS = {"trajectory", "reference", "comparison", "summary", "certificates"}
DEFAULT_OUTPUTS = {
    "trajectory": "trajectory.csv",
    "reference": "reference.csv",
    "comparison": "comparison.json",
    "summary": "summary.json",
    "certificates": "certificates.json",
}

# summary flags
OSCILLATION_WINDOW = (0.0, 3.0)
OSCILLATION_MIN_AMPLITUDE = 0.05
DRIFT_FLAG = 1e-3
# runtime invariant tolerances
VDOT_FD_RTOL = 1e-2
MIN_RESOLVED_FRACTION = 0.9
MONOTONE_START = 1.0
MONOTONE_ATOL = 1e-12
STATE_FINAL_TOL = 1e-3
LINEARITY_RTOL = 1e-9


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario description."""


def _finite_array(value, label, shape=None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{label}: expected numbers, got {value!r}") from None
    if not np.isfinite(arr).all():
        raise ScenarioError(f"{label}: all entries must be finite")
    if shape is not None and arr.shape != shape:
        raise ScenarioError(f"{label}: expected shape {shape}, got {arr.shape}")
    return arr


def _finite_scalar(value, label) -> float:
    if isinstance(value, bool):
        raise ScenarioError(f"{label}: expected a number, got {value!r}")
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{label}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ScenarioError(f"{label}: must be finite")
    return out


def _check_numbers(obj, label):
    """Reject NaN/inf anywhere in a nested structure."""
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ScenarioError(f"{label}: non-finite number")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_numbers(v, f"{label}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_numbers(v, f"{label}[{i}]")


@dataclass
class ScenarioSpec:
    """Serializable experiment description; :meth:`build` makes it runnable.

    ``system`` is a builtin name or a dict of polynomial tables; ``basis`` a
    basis name or a list of exponent rows; ``oracle`` is ``None``,
    ``{"type": "riccati"}`` or ``{"type": "weights", "weights": [...],
    "basis": ...}``.
    """

    system: object
    basis: object
    shifts: list
    alpha: float
    x0: list
    name: str = "scenario"
    method: str = "gradient"
    w0: Optional[list] = None
    horizon: float = 12.0
    step: float = 1e-3
    disturbances: list = field(default_factory=list)
    oracle: Optional[dict] = None
    outputs: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))
    sample_box: float = 2.0
    samples: int = 100
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a mapping")
        unknown = set(data) - SCENARIO_KEYS
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        missing = REQUIRED_KEYS - set(data)
        if missing:
            raise ScenarioError(f"missing scenario keys: {sorted(missing)}")
        _check_numbers(data, "scenario")
        d = copy.deepcopy(data)

        system = d["system"]
        if not isinstance(system, (str, dict)):
            raise ScenarioError("system must be a builtin name or a table of polynomials")
        basis = d["basis"]
        if not isinstance(basis, (str, list)):
            raise ScenarioError("basis must be a name or a list of exponent rows")
        shifts = _finite_array(d["shifts"], "shifts")
        if shifts.ndim != 2:
            raise ScenarioError("shifts must be a list of state vectors")
        method = d.get("method", "gradient")
        if method not in METHODS:
            raise ScenarioError(f"method must be one of {METHODS}, got {method!r}")
        x0 = _finite_array(d["x0"], "x0")
        w0 = None if d.get("w0") is None else _finite_array(d["w0"], "w0").tolist()

        disturbances = []
        for i, item in enumerate(d.get("disturbances") or []):
            if not isinstance(item, dict) or set(item) - {"time", "jump"} or "time" not in item:
                raise ScenarioError(f"disturbances[{i}] needs keys 'time' and optional 'jump'")
            jump = item.get("jump", [1.0] * x0.size)
            disturbances.append({"time": _finite_scalar(item["time"], f"disturbances[{i}].time"),
                                 "jump": _finite_array(jump, f"disturbances[{i}].jump").tolist()})

        oracle = d.get("oracle")
        if oracle is not None:
            if not isinstance(oracle, dict) or set(oracle) - ORACLE_KEYS:
                raise ScenarioError(f"oracle keys must be a subset of {sorted(ORACLE_KEYS)}")
            kind = oracle.get("type")
            if kind == "riccati":
                if set(oracle) != {"type"}:
                    raise ScenarioError("riccati oracle takes no further keys")
            elif kind == "weights":
                if "weights" not in oracle:
                    raise ScenarioError("weights oracle needs 'weights'")
                oracle["weights"] = _finite_array(oracle["weights"], "oracle.weights").tolist()
            else:
                raise ScenarioError(f"oracle type must be 'riccati' or 'weights', got {kind!r}")

        outputs = dict(DEFAULT_OUTPUTS)
        given = d.get("outputs") or {}
        if not isinstance(given, dict) or set(given) - OUTPUT_KEYS:
            raise ScenarioError(f"outputs keys must be a subset of {sorted(OUTPUT_KEYS)}")
        outputs.update({k: str(v) for k, v in given.items()})

        samples = d.get("samples", 100)
        seed = d.get("seed", 0)
        if isinstance(samples, bool) or not isinstance(samples, int) or samples < 1:
            raise ScenarioError("samples must be a positive integer")
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ScenarioError("seed must be an integer")

        return cls(
            system=system,
            basis=basis,
            shifts=shifts.tolist(),
            alpha=_finite_scalar(d["alpha"], "alpha"),
            x0=x0.tolist(),
            name=str(d.get("name", "scenario")),
            method=method,
            w0=w0,
            horizon=_finite_scalar(d.get("horizon", 12.0), "horizon"),
            step=_finite_scalar(d.get("step", 1e-3), "step"),
            disturbances=disturbances,
            oracle=oracle,
            outputs=outputs,
            sample_box=_finite_scalar(d.get("sample_box", 2.0), "sample_box"),
            samples=samples,
            seed=seed,
        )

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "system": copy.deepcopy(self.system),
            "basis": copy.deepcopy(self.basis),
            "shifts": copy.deepcopy(self.shifts),
            "alpha": self.alpha,
            "method": self.method,
            "x0": list(self.x0),
            "horizon": self.horizon,
            "step": self.step,
            "disturbances": copy.deepcopy(self.disturbances),
            "outputs": dict(self.outputs),
            "sample_box": self.sample_box,
            "samples": self.samples,
            "seed": self.seed,
        }
        if self.w0 is not None:
            out["w0"] = list(self.w0)
        if self.oracle is not None:
            out["oracle"] = copy.deepcopy(self.oracle)
        return out

    def replace(self, **changes) -> "ScenarioSpec":
        data = self.to_dict()
        data.update({k: v for k, v in changes.items() if v is not None})
        return ScenarioSpec.from_dict(data)

    def build_system(self) -> PhsSystem:
        if isinstance(self.system, str):
            return builtin_system(self.system)
        return system_from_tables(self.system)

    def build(self) -> "Experiment":
        """Resolve names, validate dimensions and compute oracle weights."""
        try:
            sys = self.build_system()
            basis = named_basis(self.basis)
            shifts = ShiftSet(self.shifts, self.alpha, self.method)
            dist = [DisturbanceImpulse(d["time"], d["jump"]) for d in self.disturbances]
            scn = Scenario(sys, basis, shifts, np.array(self.x0), None if self.w0 is None
                           else np.array(self.w0), self.horizon, self.step, dist, name=self.name)
        except ScenarioError:
            raise
        except (ValueError, TypeError) as exc:
            raise ScenarioError(str(exc)) from exc

        w_star = None
        if self.oracle is not None:
            if self.oracle["type"] == "riccati":
                w_star = riccati_weights(sys, basis)
                ref_basis = basis
            else:
                ref_basis = named_basis(self.oracle.get("basis", self.basis))
                w_star = np.array(self.oracle["weights"])
                if w_star.shape != (ref_basis.dim_r,):
                    raise ScenarioError("oracle weights do not match the oracle basis")
            scn.reference_weights = w_star
            scn.reference_basis = ref_basis
        return Experiment(self, scn, w_star)


@dataclass
class Experiment:
    """A built scenario with its oracle weights (``None`` without oracle)."""

    spec: ScenarioSpec
    scenario: Scenario
    w_star: Optional[np.ndarray]

    @property
    def same_basis(self) -> bool:
        """Whether the oracle weights live on the adaptive basis."""
        sc = self.scenario
        return self.w_star is not None and (sc.reference_basis is None or
                                            np.array_equal(sc.reference_basis.exponents,
                                                           sc.basis.exponents))


def _quadratic_form(fn, n) -> np.ndarray:
    """Symmetric ``M`` with ``fn(x) = x^T M x`` from values at unit and pair vectors."""
    E = np.eye(n)
    M = np.empty((n, n))
    for i in range(n):
        M[i, i] = fn(E[i])
    for i in range(n):
        for j in range(i + 1, n):
            M[i, j] = M[j, i] = 0.5 * (fn(E[i] + E[j]) - M[i, i] - M[j, j])
    return M


def linear_quadratic_data(sys: PhsSystem, probes: int = 5, seed: int = 0):
    """``(A, B, Q_cost, H_hessian)`` if ``sys`` is linear with quadratic H and r.

    Coefficients are read off at unit vectors and then confirmed at random
    probe states; a mismatch raises :class:`ScenarioError`.
    """
    n = sys.dim_x
    A = np.column_stack([sys.drift(e) for e in np.eye(n)])
    B = sys.G(np.zeros(n))
    Q = _quadratic_form(sys.cost_r, n)
    Hh = 2.0 * _quadratic_form(sys.H, n)
    rng = np.random.default_rng(seed)
    for x in rng.uniform(-2.0, 2.0, size=(probes, n)):
        scale = 1.0 + np.abs(x).max() ** 2
        ok = (np.allclose(sys.drift(x), A @ x, rtol=0, atol=LINEARITY_RTOL * scale * (1 + np.abs(A).max()))
              and np.allclose(sys.G(x), B, rtol=0, atol=LINEARITY_RTOL * (1 + np.abs(B).max()))
              and abs(sys.cost_r(x) - x @ Q @ x) <= LINEARITY_RTOL * scale * (1 + np.abs(Q).max())
              and abs(sys.H(x) - 0.5 * x @ Hh @ x) <= LINEARITY_RTOL * scale * (1 + np.abs(Hh).max()))
        if not ok:
            raise ScenarioError("riccati oracle needs a linear system with quadratic H and r")
    return A, B, Q, Hh


def riccati_weights(sys: PhsSystem, basis) -> np.ndarray:
    """Weights of the LQR value function on a quadratic monomial basis.

    With ``r(x) = x^T Q x`` the running cost ``1/2 (r + u^T S u)`` is the
    standard LQR cost with state weight ``Q``.
    """
    A, B, Q, Hh = linear_quadratic_data(sys)
    sol = solve_riccati(A, B, Q, sys.cost_S)
    if basis.exponents is None:
        raise ScenarioError("riccati oracle needs a monomial basis")
    try:
        return quadratic_weights(sol.P, basis.exponents, Hh)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


# --- built-in experiments ---------------------------------------------------

QUADRATIC_WEIGHTS_NONLINEAR = [1.5, 0.0, 0.5]

BUILTIN_SCENARIOS = {
    "linear-example": {
        "name": "linear-example",
        "system": "linear-example",
        "basis": "quadratic-2d",
        "shifts": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, -1.0]],
        "alpha": 0.01,
        "x0": [1.0, 1.0],
        "disturbances": [{"time": 6.0, "jump": [1.0, 1.0]}],
        "oracle": {"type": "riccati"},
    },
    "nonlinear-example": {
        "name": "nonlinear-example",
        "system": "nonlinear-example",
        "basis": "quadratic-2d",
        "shifts": [[0.0, 0.0], [-1.0, 0.0], [0.0, -1.0], [1.0, -1.0]],
        "alpha": 0.02,
        "x0": [1.0, 1.0],
        "disturbances": [{"time": 6.0, "jump": [1.0, 1.0]}],
        "oracle": {"type": "weights", "weights": QUADRATIC_WEIGHTS_NONLINEAR},
        # r(x) turns negative at e.g. x = [-1.5, 0]; validate where it is positive
        "sample_box": 0.3,
    },
    "nonlinear-wrong-basis": {
        "name": "nonlinear-wrong-basis",
        "system": "nonlinear-example",
        "basis": "quadratic-2d-wrong",
        "shifts": [[0.0, 0.0], [-1.0, 0.0], [0.0, -1.0], [1.0, -1.0]],
        "alpha": 0.02,
        "x0": [1.0, 1.0],
        "disturbances": [{"time": 6.0, "jump": [1.0, 1.0]}],
        "oracle": {"type": "weights", "weights": QUADRATIC_WEIGHTS_NONLINEAR,
                   "basis": "quadratic-2d"},
        "sample_box": 0.3,
    },
}


def builtin_scenario(name: str) -> ScenarioSpec:
    if name not in BUILTIN_SCENARIOS:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {sorted(BUILTIN_SCENARIOS)}")
    return ScenarioSpec.from_dict(BUILTIN_SCENARIOS[name])


def load_scenario(source) -> ScenarioSpec:
    """Builtin name or path to a YAML/JSON scenario file."""
    if isinstance(source, str) and source in BUILTIN_SCENARIOS:
        return builtin_scenario(source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {str(source)!r}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: invalid YAML: {exc}") from exc
    spec = ScenarioSpec.from_dict(data)
    if "name" not in data:
        spec.name = path.stem
    return spec


def dump_scenario(spec: ScenarioSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


# --- certification ------------------------------------------------------------

def certify(exp: Experiment, seed: Optional[int] = None) -> dict:
    """Structural checks, CLF certificates and the convexity diagnostic.

    ``required`` lists the checks whose failure blocks a run: structure, the
    sampled zero-state detectability condition and, for linear systems, the
    exact kernel test. Rank of R is sufficient only, and the convexity
    diagnostic only warns.
    """
    spec, scn = exp.spec, exp.scenario
    sys = scn.system
    seed = spec.seed if seed is None else seed
    samples = sample_box(sys.dim_x, spec.samples, spec.sample_box, seed)
    report = validate_structure(sys, samples)
    certs = [Certificate("structure", report.passed, [], {"checks": report.checks,
                                                        "violations": report.violations})]
    certs.append(certify_rank_R(sys, samples))
    probes = np.vstack([samples, zsd_probe_states(sys, samples)])
    certs.append(certify_zsd_sampled(sys, probes))
    required = ["structure", "zsd_sampled"]
    try:
        _, B, _, Hh = linear_quadratic_data(sys)
    except ScenarioError:
        pass
    else:
        zero = np.zeros(sys.dim_x)
        certs.append(certify_linear_kernel(sys.J(zero), sys.R(zero), B, Hh))
        required.append("linear_kernel")

    diags = {"x0_w0": convexity_diagnostic(sys, scn.clf, scn.shifts, scn.x0, scn.w0).as_dict()}
    if exp.same_basis:
        diags["x0_w_star"] = convexity_diagnostic(sys, scn.clf, scn.shifts, scn.x0, exp.w_star).as_dict()
    out = [c.as_dict() for c in certs]
    passed = all(c.passed for c in certs if c.name in required)
    return {"scenario": spec.name, "seed": seed, "sample_box": spec.sample_box,
            "n_samples": spec.samples, "certificates": out, "convexity": diags,
            "required": required, "passed": passed}


# --- runtime invariants and summary ------------------------------------------

def _row(name, passed, **detail):
    return {"name": name, "result": "PASS" if passed else "FAIL", **detail}


def vdot_fd_errors(traj: Trajectory, scn: Scenario):
    """Relative error between the FD slope of recorded V and the exact dV/dt.

    The exact derivative is the closed-form x-part plus ``Phi(x)^T w'``.
    Returns ``(errors, n_skipped)``. Samples next to an impulse are skipped, as
    are samples the grid does not resolve: there the predicted truncation
    error of the central difference, ``|second difference of dV/dt| / 6``,
    exceeds half the tolerance.
    """
    h = traj.t[1] - traj.t[0]
    phi = np.array([scn.basis.phi(x) for x in traj.x])
    exact = traj.vdot + np.einsum("ki,ki->k", phi, traj.wdot)
    k = np.arange(2, traj.t.size - 2)
    slope = (traj.V[k + 1] - traj.V[k - 1]) / (2.0 * h)
    truncation = np.abs(exact[k + 1] - 2.0 * exact[k] + exact[k - 1]) / 6.0
    keep = np.ones(k.size, dtype=bool)
    for j in traj.jump_indices:
        keep &= np.abs(k - j) > 2
    scale = np.abs(exact[k])
    floor = 1e-8 * scale.max() if scale.size else 0.0
    scale = np.maximum(scale, floor)
    resolved = keep & (truncation <= 0.5 * VDOT_FD_RTOL * scale)
    err = np.abs(slope - exact[k]) / scale
    return err[resolved], int(keep.sum() - resolved.sum())


def check_invariants(traj: Trajectory, exp: Experiment) -> list:
    """Runtime invariants of a closed-loop record, one table row each."""
    scn = exp.scenario
    rows = []
    rows.append(_row("vdot_nonpositive", bool(traj.vdot.max() <= 0.0), max=float(traj.vdot.max())))
    off = np.linalg.norm(traj.x, axis=1) > 1e-9
    v_min = float(traj.V[off].min()) if off.any() else 0.0
    rows.append(_row("V_positive", bool(off.sum() == 0 or v_min > 0.0), min=v_min))
    u_min = float(traj.upsilon[off].min()) if off.any() else 1.0
    rows.append(_row("upsilon_positive", bool(u_min > 0.0), min=u_min))
    dc = np.diff(traj.cost)
    rows.append(_row("cost_nondecreasing", bool((dc >= 0).all()), min_increment=float(dc.min())))
    err, skipped = vdot_fd_errors(traj, scn)
    enough = err.size >= MIN_RESOLVED_FRACTION * (err.size + skipped)
    rows.append(_row("vdot_fd", bool(enough and (err.size == 0 or err.max() <= VDOT_FD_RTOL)),
                     max_rel_error=float(err.max()) if err.size else 0.0, rtol=VDOT_FD_RTOL,
                     n_checked=int(err.size), n_underresolved=skipped))
    if exp.w_star is not None and exp.spec.oracle["type"] == "riccati":
        dist = np.linalg.norm(traj.w - exp.w_star, axis=1)
        inside = np.flatnonzero(dist < MONOTONE_START)
        if inside.size:
            d = dist[inside[0]:]
            worst = float(np.diff(d).max()) if d.size > 1 else 0.0
        else:
            worst = 0.0
        rows.append(_row("w_distance_monotone", inside.size > 0 and worst <= MONOTONE_ATOL,
                         max_increase=worst))
    return rows


def oscillation_amplitude(t, values, window=OSCILLATION_WINDOW) -> float:
    """Largest peak-to-trough swing between consecutive local extrema in ``window``."""
    mask = (t >= window[0]) & (t <= window[1]) & np.isfinite(values)
    v = values[mask]
    if v.size < 3:
        return 0.0
    d = np.diff(v)
    turns = np.flatnonzero(np.sign(d[1:]) * np.sign(d[:-1]) < 0) + 1
    if turns.size == 0:
        return 0.0
    ext = v[np.concatenate([[0], turns, [v.size - 1]])]
    return float(np.abs(np.diff(ext)).max())


def post_disturbance_drift(traj: Trajectory) -> Optional[float]:
    """``|w(T) - w(t_d-)|`` for the first impulse; the record at ``t_d`` is pre-jump."""
    if not traj.jump_indices:
        return None
    return float(np.linalg.norm(traj.w[-1] - traj.w[traj.jump_indices[0]]))


def summarize(traj: Trajectory, exp: Experiment, invariants: list,
              reference: Optional[Trajectory] = None) -> dict:
    amp = oscillation_amplitude(traj.t, traj.upsilon)
    drift = post_disturbance_drift(traj)
    out = {
        "scenario": exp.spec.name,
        "horizon": float(traj.t[-1]),
        "step": float(traj.t[1] - traj.t[0]),
        "terminal_w": traj.w[-1].tolist(),
        "terminal_upsilon": float(traj.upsilon[-1]),
        "terminal_state_norm": float(np.linalg.norm(traj.x[-1])),
        "state_converged": bool(np.linalg.norm(traj.x[-1]) < STATE_FINAL_TOL),
        "total_cost": float(traj.cost[-1]),
        "upsilon_oscillation": {"window": list(OSCILLATION_WINDOW), "amplitude": amp,
                                "flag": bool(amp >= OSCILLATION_MIN_AMPLITUDE)},
        "post_disturbance_w_drift": (None if drift is None
                                     else {"value": drift, "flag": bool(drift >= DRIFT_FLAG)}),
        "invariants": invariants,
        "invariants_passed": all(r["result"] == "PASS" for r in invariants),
    }
    if exp.w_star is not None:
        out["w_star"] = exp.w_star.tolist()
        out["terminal_w_distance"] = (float(np.linalg.norm(traj.w[-1] - exp.w_star))
                                      if exp.same_basis else None)
    if reference is not None:
        out["reference_total_cost"] = float(reference.cost[-1])
        out["reference_terminal_state_norm"] = float(np.linalg.norm(reference.x[-1]))
    return out


@dataclass
class RunResult:
    exit_code: int
    message: str
    summary: Optional[dict] = None
    certificates: Optional[dict] = None
    trajectory: Optional[Trajectory] = field(default=None, repr=False)
    reference: Optional[Trajectory] = field(default=None, repr=False)


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=False, allow_nan=True) + "\n")


EXIT_OK, EXIT_INVARIANT, EXIT_PARSE, EXIT_CERTIFY, EXIT_SIMULATION = 0, 1, 2, 3, 4


def run_experiment(exp: Experiment, out_dir=None, seed: Optional[int] = None) -> RunResult:
    """Certify, simulate (plus reference), check invariants and write outputs."""
    from .simulator import SimulationError

    spec = exp.spec
    certs = certify(exp, seed)
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / spec.outputs["certificates"], certs)
    if not certs["passed"]:
        failed = [c["name"] for c in certs["certificates"]
                  if c["name"] in certs["required"] and c["result"] == "FAIL"]
        return RunResult(EXIT_CERTIFY, f"certification failed: {', '.join(failed)}",
                         certificates=certs)
    for key, d in certs["convexity"].items():
        if d["result"] == "FAIL":
            logger.warning("%s: convexity diagnostic fails at %s", spec.name, key)

    try:
        traj = simulate(exp.scenario)
        ref = simulate_reference(exp.scenario) if exp.w_star is not None else None
    except SimulationError as exc:
        return RunResult(EXIT_SIMULATION, f"simulation aborted: {exc}", certificates=certs)

    invariants = check_invariants(traj, exp)
    summary = summarize(traj, exp, invariants, ref)
    if out is not None:
        traj.to_csv(out / spec.outputs["trajectory"])
        if ref is not None:
            ref.to_csv(out / spec.outputs["reference"])
            t_from = exp.scenario.disturbances[0].time if exp.scenario.disturbances else 0.0
            _write_json(out / spec.outputs["comparison"], compare(traj, ref, t_from).as_dict())
        _write_json(out / spec.outputs["summary"], summary)
    if not summary["invariants_passed"]:
        failed = [r["name"] for r in invariants if r["result"] == "FAIL"]
        return RunResult(EXIT_INVARIANT, f"runtime invariants failed: {', '.join(failed)}",
                         summary, certs, traj, ref)
    return RunResult(EXIT_OK, "ok", summary, certs, traj, ref)
