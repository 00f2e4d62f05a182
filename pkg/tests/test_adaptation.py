import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phsmoc import (
    ShiftSet,
    convexity_diagnostic,
    fd_check,
    jw_gradient,
    jw_hessian,
    jw_value,
    moc_scalars,
    quadric_at,
    quadric_value,
    weight_rhs,
)
from phsmoc.clf import ExtendedClf, named_basis
from phsmoc.system import linear_example, nonlinear_example

LIN_SHIFTS = [[0, 0], [1, 0], [0, 1], [1, -1]]
NONLIN_SHIFTS = [[0, 0], [-1, 0], [0, -1], [1, -1]]


@pytest.fixture(scope="module")
def lin_shifts():
    return ShiftSet(LIN_SHIFTS, 0.01)


@pytest.fixture(scope="module")
def nonlin_shifts():
    return ShiftSet(NONLIN_SHIFTS, 0.02)


def test_quadric_examples(lin, lin_clf):
    qc = quadric_at(lin, lin_clf, [1.0, 1.0])
    assert qc.a_const == pytest.approx(1 + 4 - 101)
    assert quadric_value(qc, np.zeros(3)) == pytest.approx(-96.0)
    sc = moc_scalars(lin, lin_clf, [1.0, 1.0], np.zeros(3))
    assert sc.s_ups - 2 * sc.f_ups - sc.q_ups == pytest.approx(-96.0)
    z = quadric_at(lin, lin_clf, np.zeros(2))
    assert not z.A.any() and not z.a_lin.any() and z.a_const == 0.0
    assert quadric_value(z, np.array([5.0, -3.0, 2.0])) == 0.0


def test_quadric_hand_coefficients(lin, lin_clf):
    """At x = [1, 1]: Phi_x = [[2, 0], [1, 1], [0, 2]], K = e1 e1^T, (J - R) x = [-2, 0]."""
    qc = quadric_at(lin, lin_clf, [1.0, 1.0])
    Phi_x = np.array([[2.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
    K = np.diag([1.0, 0.0])
    np.testing.assert_allclose(qc.A, Phi_x @ K @ Phi_x.T)
    np.testing.assert_allclose(qc.a_lin, 2 * (Phi_x @ K @ np.ones(2) - Phi_x @ [-2.0, 0.0]))


def test_quadric_dimension_errors(lin, lin_clf):
    with pytest.raises(ValueError):
        quadric_at(lin, lin_clf, [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        quadric_value(quadric_at(lin, lin_clf, [1.0, 1.0]), np.zeros(2))


@pytest.mark.parametrize("make_sys", [linear_example, nonlinear_example])
@pytest.mark.parametrize("basis", ["quadratic-2d", "quadratic-2d-wrong"])
def test_cross_module_identity(make_sys, basis, rng):
    sys = make_sys()
    clf = ExtendedClf(sys, named_basis(basis))
    for _ in range(500):
        x, w = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 3)
        sc = moc_scalars(sys, clf, x, w)
        assert abs(quadric_value(quadric_at(sys, clf, x), w)
                   - (sc.s_ups - 2 * sc.f_ups - sc.q_ups)) <= 1e-10


def test_quadric_vanishes_at_riccati_weights(lin, lin_clf, w_star, rng):
    for x in rng.uniform(-2, 2, size=(200, 2)):
        qc = quadric_at(lin, lin_clf, x)
        assert abs(quadric_value(qc, w_star)) <= 1e-8
        assert np.linalg.eigvalsh(qc.A).min() >= -1e-12


def test_A_psd_nonlinear(nonlin_clf, rng):
    for x in rng.uniform(-2, 2, size=(100, 2)):
        assert np.linalg.eigvalsh(quadric_at(nonlin_clf.system, nonlin_clf, x).A).min() >= -1e-12


def test_jw_examples(lin, lin_clf, lin_shifts, w_star, rng):
    one = ShiftSet([[0, 0], [0, 0], [0, 0]], 0.01)
    assert jw_value(lin, lin_clf, one, [1.0, 1.0], np.zeros(3)) == pytest.approx(3 * 96.0 ** 2)
    for x in rng.uniform(-2, 2, size=(20, 2)):
        assert jw_value(lin, lin_clf, lin_shifts, x, w_star) <= 1e-14
        np.testing.assert_allclose(jw_gradient(lin, lin_clf, lin_shifts, x, w_star), 0, atol=1e-7)


def test_single_shift_objective(lin, lin_clf):
    """Objective with one zero shift is Q^2 = 96^2 at x = [1, 1], w = 0."""
    from phsmoc.adaptation import _terms

    one = ShiftSet([[0, 0]], 0.01)
    _, res, _ = _terms(lin, lin_clf, one, np.ones(2), np.zeros(3))
    assert float(res @ res) == pytest.approx(9216.0)


def test_shift_set_validation(caplog):
    with pytest.raises(ValueError):
        ShiftSet([[0, 0]], 0.0)
    with pytest.raises(ValueError):
        ShiftSet([[0, 0]], 0.1, method="bfgs")
    with pytest.raises(ValueError):
        ShiftSet([[0, float("nan")]], 0.1)
    with pytest.raises(ValueError, match="at least r=3"):
        ShiftSet([[0, 0], [1, 0]], 0.1).check(2, 3)
    with caplog.at_level(logging.WARNING):
        ShiftSet([[1, 0], [0, 0], [0, 1]], 0.1)
    assert "c_1 = 0" in caplog.text


@pytest.mark.parametrize("make_sys,shifts", [(linear_example, LIN_SHIFTS),
                                             (nonlinear_example, NONLIN_SHIFTS)])
def test_gradient_matches_fd(make_sys, shifts, rng):
    sys = make_sys()
    clf = ExtendedClf(sys, named_basis("quadratic-2d"))
    sh = ShiftSet(shifts, 0.01)
    for _ in range(100):
        x, w = rng.uniform(-1.5, 1.5, 2), rng.uniform(-1.5, 1.5, 3)
        rep = fd_check(lambda v: jw_value(sys, clf, sh, x, v), w, h=1e-5,
                       analytic=lambda v: jw_gradient(sys, clf, sh, x, v))
        assert rep.rel_error <= 1e-6


def test_hessian_matches_fd(lin, lin_clf, lin_shifts, rng):
    for _ in range(50):
        x, w = rng.uniform(-1.5, 1.5, 2), rng.uniform(-1.5, 1.5, 3)
        rep = fd_check(lambda v: jw_gradient(lin, lin_clf, lin_shifts, x, v), w,
                       analytic=jw_hessian(lin, lin_clf, lin_shifts, x, w))
        assert rep.rel_error <= 1e-4
        H = jw_hessian(lin, lin_clf, lin_shifts, x, w)
        np.testing.assert_allclose(H, H.T, atol=1e-9 * np.abs(H).max())


def test_hessian_at_optimum(lin, lin_clf, lin_shifts, w_star):
    x = np.array([1.0, 1.0])
    H = jw_hessian(lin, lin_clf, lin_shifts, x, w_star)
    V = np.array([quadric_at(lin, lin_clf, x + c).gradient(w_star) for c in lin_shifts.shifts])
    np.testing.assert_allclose(H, 2 * V.T @ V, rtol=1e-9, atol=1e-9)
    assert np.linalg.eigvalsh(H).min() > 0
    assert np.linalg.matrix_rank(V) == 3


def test_descent_property(lin, lin_clf, lin_shifts, rng):
    for _ in range(50):
        x, w = rng.uniform(-1.5, 1.5, 2), rng.uniform(-1.5, 1.5, 3)
        g = jw_gradient(lin, lin_clf, lin_shifts, x, w)
        if np.linalg.norm(g) < 1e-8:
            continue
        J0 = jw_value(lin, lin_clf, lin_shifts, x, w)
        step = 1e-4 / np.linalg.norm(g)
        assert jw_value(lin, lin_clf, lin_shifts, x, w - step * g) < J0


def test_convexity_examples(lin, lin_clf, lin_shifts, nonlin, nonlin_clf, nonlin_shifts, w_star):
    rep = convexity_diagnostic(lin, lin_clf, lin_shifts, [1.0, 1.0], w_star)
    assert rep.passed and rep.rank == 3 and rep.min_eig_hessian > 0
    dup = ShiftSet([[0, 0], [0, 0], [0, 0]], 0.01)
    rep = convexity_diagnostic(lin, lin_clf, dup, [1.0, 1.0], w_star)
    assert not rep.passed and rep.rank <= 1
    assert rep.as_dict()["result"] == "FAIL"
    assert convexity_diagnostic(nonlin, nonlin_clf, nonlin_shifts, [1.0, 1.0], np.zeros(3)).passed


def test_convexity_nonlinear_at_quoted_weights(nonlin, nonlin_clf, nonlin_shifts):
    """At x0 two shifted states lie on the x1-axis where G = 0; their v_i are
    parallel and the rank drops to 2."""
    rep = convexity_diagnostic(nonlin, nonlin_clf, nonlin_shifts, [1.0, 1.0], [1.5, 0.0, 0.5])
    assert rep.rank == 2
    np.testing.assert_allclose(np.cross(rep.vectors[2], rep.vectors[3]), 0, atol=1e-12)


def test_weight_rhs(lin, lin_clf, w_star, rng):
    for method in ("gradient", "newton", "newton-pseudoinverse"):
        sh = ShiftSet(LIN_SHIFTS, 0.01, method)
        np.testing.assert_allclose(weight_rhs(lin, lin_clf, sh, [1.0, 1.0], w_star), 0, atol=1e-9)
    sh = ShiftSet(LIN_SHIFTS, 0.01)
    for _ in range(20):
        x, w = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 3)
        g = jw_gradient(lin, lin_clf, sh, x, w)
        d = weight_rhs(lin, lin_clf, sh, x, w)
        np.testing.assert_allclose(d, -0.01 * g)
        assert d @ g <= 0


def test_newton_direction(lin, lin_clf, w_star):
    x, w = np.array([1.0, 1.0]), w_star + np.array([0.1, -0.05, 0.02])
    sh = ShiftSet(LIN_SHIFTS, 0.5, "newton")
    H = jw_hessian(lin, lin_clf, sh, x, w)
    g = jw_gradient(lin, lin_clf, sh, x, w)
    d = weight_rhs(lin, lin_clf, sh, x, w)
    np.testing.assert_allclose(H @ d, -0.5 * g, rtol=1e-8)
    pinv = weight_rhs(lin, lin_clf, ShiftSet(LIN_SHIFTS, 0.5, "newton-pseudoinverse"), x, w)
    np.testing.assert_allclose(pinv, d, rtol=1e-6)


def test_newton_falls_back_on_singular_hessian(lin, lin_clf, caplog):
    dup = [[0, 0], [0, 0], [0, 0]]
    x, w = np.array([1.0, 1.0]), np.zeros(3)
    with caplog.at_level(logging.DEBUG, logger="phsmoc.adaptation"):
        d = weight_rhs(lin, lin_clf, ShiftSet(dup, 1.0, "newton"), x, w)
    assert "pseudoinverse" in caplog.text
    ref = weight_rhs(lin, lin_clf, ShiftSet(dup, 1.0, "newton-pseudoinverse"), x, w)
    np.testing.assert_allclose(d, ref)
    assert np.isfinite(d).all()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 2, elements=st.floats(-2, 2, allow_nan=False)),
       arrays(np.float64, 3, elements=st.floats(-3, 3, allow_nan=False)))
def test_objective_nonnegative(x, w):
    sys = linear_example()
    clf = ExtendedClf(sys, named_basis("quadratic-2d"))
    sh = ShiftSet(LIN_SHIFTS, 0.01)
    assert jw_value(sys, clf, sh, x, w) >= 0
