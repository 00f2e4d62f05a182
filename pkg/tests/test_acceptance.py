"""Acceptance criteria A1-A9.

Each test prints one ``A<k> PASS|FAIL`` line listing its sub-checks with the
measured value and the pinned tolerance. The lines are repeated in the
terminal summary.
"""

import numpy as np
import pytest

from phsmoc import (
    ShiftSet,
    fd_check,
    hjbe_residual,
    jw_gradient,
    jw_value,
    moc_scalars,
    psd_kernel_membership,
    quadric_at,
    quadric_value,
    upsilon,
)
from phsmoc.clf import ExtendedClf, named_basis
from phsmoc.scenarios import oscillation_amplitude
from phsmoc.system import linear_example, nonlinear_example

from conftest import ACCEPTANCE_LINES
from test_clf import spectral_gap_case
from test_moc import direct_formula

SEED = 7

P_QUOTED = np.array([[8.97697, -0.730021], [-0.730021, 0.963556]])
W_QUOTED = np.array([3.988485, -0.730021, -0.018222])
NONLIN_QUOTED = np.array([1.5, 0.0, 0.5])

TOL_RICCATI = 1e-4
TOL_LEARN_W = 1e-2
TOL_LEARN_UPS = 1e-2
TOL_POST_SUP = 1e-3
TOL_UPS_ONE = 1e-8
TOL_QUADRIC = 1e-8
TOL_WDOT = 1e-4
TOL_UPS_CONST = 1e-2
TOL_DRIFT = 1e-2
TOL_NONLIN_W = 5e-2
MIN_OSC = 0.05
MIN_MOVE = 1e-3
TOL_GRAD_FD = 1e-5
TOL_IDENTITY = 1e-10
TOL_BRANCH = 1e-4


def check(name, value, ok, bound):
    return {"name": name, "value": value, "ok": bool(ok), "bound": bound}


def report(key, title, checks, waived=()):
    passed = all(c["ok"] for c in checks)
    parts = [f"{c['name']}={c['value']:.3g} ({c['bound']}) {'ok' if c['ok'] else 'FAILED'}"
             for c in checks]
    parts += [f"{w}: waived" for w in waived]
    line = f"{key} {'PASS' if passed else 'FAIL'}  {title}: " + "; ".join(parts)
    ACCEPTANCE_LINES[key] = line
    print(line)
    failed = [c["name"] for c in checks if not c["ok"]]
    assert passed, f"{key} failed: {', '.join(failed)}"


def pre_impulse(res):
    """Index of the last sample before the impulse (the row holds x(6-), w(6-))."""
    return res.trajectory.jump_indices[0]


def last_second(tr):
    return tr.t >= tr.t[-1] - 1.0


def test_A1_riccati_reproduction(riccati):
    dP = np.abs(riccati.P - P_QUOTED).max()
    dw = np.abs(riccati.w_star - W_QUOTED).max()
    report("A1", "Riccati reproduction", [
        check("max|P-P_quoted|", dP, dP <= TOL_RICCATI, f"<= {TOL_RICCATI:g}"),
        check("max|w*-w_quoted|", dw, dw <= TOL_RICCATI, f"<= {TOL_RICCATI:g}"),
    ])


def test_A2_linear_learning(linear_run):
    exp, res = linear_run
    k = pre_impulse(res)
    tr = res.trajectory
    assert tr.t[k] == pytest.approx(6.0)
    dw = np.linalg.norm(tr.w[k] - exp.w_star)
    du = abs(tr.upsilon[k] - 1)
    report("A2", "linear learning by t=6-", [
        check("|w(6-)-w*|", dw, dw <= TOL_LEARN_W, f"<= {TOL_LEARN_W:g}"),
        check("|ups(6-)-1|", du, du <= TOL_LEARN_UPS, f"<= {TOL_LEARN_UPS:g}"),
    ])


def test_A3_post_disturbance_optimality(linear_run):
    _, res = linear_run
    tr, ref = res.trajectory, res.reference
    window = tr.t >= 6.0
    sup = np.abs(tr.x[window] - ref.x[window]).max()
    report("A3", "adaptive vs Riccati on [6,12]", [
        check("sup|x-x_ref|", sup, sup <= TOL_POST_SUP, f"<= {TOL_POST_SUP:g}"),
    ])


def test_A4_upsilon_identity(w_star):
    sys = linear_example()
    clf = ExtendedClf(sys, named_basis("quadratic-2d"))
    xs = np.random.default_rng(SEED).uniform(-2, 2, size=(100, 2))
    ups = max(abs(upsilon(moc_scalars(sys, clf, x, w_star)) - 1) for x in xs)
    quad = max(abs(quadric_value(quadric_at(sys, clf, x), w_star)) for x in xs)
    report("A4", "Upsilon = 1 at Riccati weights", [
        check("max|ups-1|", ups, ups <= TOL_UPS_ONE, f"<= {TOL_UPS_ONE:g}"),
        check("max|Q(x,w*)|", quad, quad <= TOL_QUADRIC, f"<= {TOL_QUADRIC:g}"),
    ])


def test_A5_nonlinear_scenario(nonlinear_run):
    exp, res = nonlinear_run
    tr = res.trajectory
    last = last_second(tr)
    wdot = np.linalg.norm(tr.wdot[last], axis=1).max()
    ups_range = float(np.ptp(tr.upsilon[last]))
    drift = np.linalg.norm(tr.w[-1] - tr.w[pre_impulse(res)])
    # the quoted value function must zero the HJB residual for the strong check
    clf = exp.scenario.clf
    probes = np.random.default_rng(SEED).uniform(-0.3, 0.3, size=(100, 2))
    residual = max(abs(hjbe_residual(exp.scenario.system, clf, x, NONLIN_QUOTED)) for x in probes)
    checks = [
        check("max|wdot| last 1s", wdot, wdot <= TOL_WDOT, f"<= {TOL_WDOT:g}"),
        check("range ups last 1s", ups_range, ups_range <= TOL_UPS_CONST, f"<= {TOL_UPS_CONST:g}"),
        check("|w(12)-w(6-)|", drift, drift <= TOL_DRIFT, f"<= {TOL_DRIFT:g}"),
    ]
    waived = []
    if residual <= 1e-8:
        dw = np.linalg.norm(tr.w[-1] - NONLIN_QUOTED)
        checks.append(check("|w(12)-w_quoted|", dw, dw <= TOL_NONLIN_W, f"<= {TOL_NONLIN_W:g}"))
    else:
        waived.append(f"|w(12)-w_quoted| (quoted V has HJB residual up to {residual:.2g})")
    report("A5", "nonlinear scenario stationarity", checks, waived)


def test_A6_wrong_basis(wrong_basis_run):
    _, res = wrong_basis_run
    tr = res.trajectory
    amp = oscillation_amplitude(tr.t, tr.upsilon, (0.0, 3.0))
    move = np.linalg.norm(tr.w[-1] - tr.w[pre_impulse(res)])
    report("A6", "wrong-basis ablation", [
        check("ups swing on [0,3]", amp, amp >= MIN_OSC, f">= {MIN_OSC:g}"),
        check("|w(12)-w(6-)|", move, move >= MIN_MOVE, f">= {MIN_MOVE:g}"),
    ])


def test_A7_invariant_suite(linear_run, nonlinear_run, wrong_basis_run):
    checks = []
    for label, (exp, res) in (("lin", linear_run), ("nonlin", nonlinear_run),
                              ("wrong", wrong_basis_run)):
        tr = res.trajectory
        off = np.linalg.norm(tr.x, axis=1) > 1e-9
        checks.append(check(f"{label} max vdot", tr.vdot.max(), tr.vdot.max() <= 0, "<= 0"))
        checks.append(check(f"{label} min V off 0", tr.V[off].min(), tr.V[off].min() > 0, "> 0"))
        checks.append(check(f"{label} min ups", tr.upsilon[off].min(), tr.upsilon[off].min() > 0, "> 0"))

    exp, res = linear_run
    dist = np.linalg.norm(res.trajectory.w - exp.w_star, axis=1)
    start = np.flatnonzero(dist < 1.0)[0]
    rise = np.diff(dist[start:]).max()
    checks.append(check("lin max rise |w-w*|", rise, rise <= 0, "<= 0 once below 1"))

    rng = np.random.default_rng(SEED)
    grad_err, ident_err = 0.0, 0.0
    for make, shifts in ((linear_example, [[0, 0], [1, 0], [0, 1], [1, -1]]),
                         (nonlinear_example, [[0, 0], [-1, 0], [0, -1], [1, -1]])):
        sys = make()
        clf = ExtendedClf(sys, named_basis("quadratic-2d"))
        sh = ShiftSet(shifts, 0.01)
        for _ in range(50):
            x, w = rng.uniform(-1.5, 1.5, 2), rng.uniform(-1.5, 1.5, 3)
            rep = fd_check(lambda v: jw_value(sys, clf, sh, x, v), w, h=1e-5,
                           analytic=lambda v: jw_gradient(sys, clf, sh, x, v))
            grad_err = max(grad_err, rep.rel_error)
        for _ in range(500):
            x, w = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 3)
            sc = moc_scalars(sys, clf, x, w)
            diff = quadric_value(quadric_at(sys, clf, x), w) - (sc.s_ups - 2 * sc.f_ups - sc.q_ups)
            ident_err = max(ident_err, abs(diff))
    checks.append(check("jw_gradient FD rel err", grad_err, grad_err <= TOL_GRAD_FD, f"<= {TOL_GRAD_FD:g}"))
    checks.append(check("quadric identity", ident_err, ident_err <= TOL_IDENTITY, f"<= {TOL_IDENTITY:g}"))
    report("A7", "invariant suite", checks)


def test_A8_psd_kernel_randomized():
    rng = np.random.default_rng(SEED)
    wrong = 0
    for i in range(1000):
        M, x = spectral_gap_case(rng, int(rng.integers(2, 7)), in_kernel=bool(i % 2))
        quad_zero = abs(x @ M @ x) <= 1e-12
        if quad_zero != psd_kernel_membership(M, x, tol=1e-6) or quad_zero != bool(i % 2):
            wrong += 1
    report("A8", "PSD kernel test on 1000 random matrices", [
        check("disagreements", wrong, wrong == 0, "== 0"),
    ])


def test_A9_branch_continuity():
    sys = linear_example()
    clf = ExtendedClf(sys, named_basis("quadratic-2d"))
    worst_code, worst_direct, n = 0.0, 0.0, 0
    for eps in np.logspace(-3, -9, 13):
        sc = moc_scalars(sys, clf, np.array([eps, 1.0]), np.zeros(3))
        assert sc.f_ups < 0
        if sc.s_ups > 1e-6:
            continue
        limit = -sc.q_ups / (2 * sc.f_ups)
        worst_code = max(worst_code, abs(upsilon(sc) - limit) / limit)
        worst_direct = max(worst_direct, abs(direct_formula(sc.f_ups, sc.s_ups, sc.q_ups) - limit) / limit)
        n += 1
    assert n >= 10
    report("A9", "Upsilon continuity as G^T dV/dx -> 0", [
        check("rel err code vs limit", worst_code, worst_code <= TOL_BRANCH, f"<= {TOL_BRANCH:g}"),
        check("rel err formula vs limit", worst_direct, worst_direct <= TOL_BRANCH, f"<= {TOL_BRANCH:g}"),
    ])
