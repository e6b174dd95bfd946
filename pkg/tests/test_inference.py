import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from funbuffer.basis import BSplineBasis, roughness_matrix
from funbuffer.inference import (cumulative_effect, refit, region_weights, select_regions,
                                 selection_from_intervals, simdiag, variance_curve)
from funbuffer.simulate import ScenarioConfig, generate, truth
from funbuffer.solver import fit_smooth
from funbuffer.survdata import design


def test_simdiag_identity_example():
    R, d = simdiag(np.eye(2), np.diag([2.0, 0.0]), p=1)
    np.testing.assert_allclose(R.T @ R, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(d, [2.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), q=st.integers(1, 6), p=st.integers(0, 3))
def test_simdiag_congruence(seed, q, p):
    r = np.random.default_rng(seed)
    m = q + p
    A = r.normal(size=(m + 2, m))
    H = A.T @ A + 0.1 * np.eye(m)
    B = r.normal(size=(q, q))
    P = np.zeros((m, m))
    P[:q, :q] = B @ B.T
    R, d = simdiag(H, P, p=p)
    np.testing.assert_allclose(R.T @ H @ R, np.eye(m), atol=1e-10)
    np.testing.assert_allclose(R.T @ P @ R, np.diag(d), atol=1e-8 * max(1, np.abs(P).max()))
    Rinv = np.linalg.inv(R)
    np.testing.assert_allclose(Rinv.T @ np.diag(d) @ Rinv, P, atol=1e-8 * max(1, np.abs(P).max()))
    assert np.all(np.diff(d[:q]) >= -1e-12)
    np.testing.assert_allclose(d[q:], 0.0, atol=1e-8 * max(1, np.abs(P).max()))


def test_select_regions_cases():
    basis = BSplineBasis(3, 4)
    sel = select_regions(np.zeros(basis.n_basis), basis)
    assert sel.empty and sel.buffer_distance == 0.0 and sel.intervals == ()
    b = np.zeros(basis.n_basis)
    b[0] = 0.3
    sel = select_regions(b, basis)
    assert np.flatnonzero(sel.interval_mask).tolist() == [0]
    assert sel.intervals == ((0.0, 0.2),)
    np.testing.assert_array_equal(sel.active, [0, 1, 2, 3])
    b[:] = 0
    b[4] = 1.0  # in groups 1..4
    sel = select_regions(b, basis)
    assert np.flatnonzero(sel.interval_mask).tolist() == [1, 2, 3, 4]
    assert sel.buffer_distance == pytest.approx(1.0)
    with pytest.raises(ValueError):
        select_regions(np.zeros(3), basis)


def test_disconnected_regions():
    basis = BSplineBasis(1, 9)
    b = np.zeros(basis.n_basis)
    b[1], b[7] = 1.0, 1.0
    sel = select_regions(b, basis)
    assert len(sel.intervals) == 2
    assert sel.contains([0.05, 0.15, 0.45, 0.65, 0.75]).tolist() == [True, True, False, True, True]


def test_truth_buffer_distance_scenario_two():
    basis = BSplineBasis(3, 9)  # knot at 0.5
    s = np.linspace(0, 1, 5001)
    B = basis.evaluate(s)
    # represent the truth with the basis functions supported inside [0, 0.5]
    inside = np.array([s[B[:, k] > 0].max() <= 0.5 + 1e-9 for k in range(basis.n_basis)])
    coef = np.zeros(basis.n_basis)
    coef[inside] = np.linalg.lstsq(B[:, inside], truth("II")(s), rcond=None)[0]
    assert select_regions(coef, basis).buffer_distance == pytest.approx(0.5)
    assert selection_from_intervals(basis, [(0.0, 0.5)]).buffer_distance == pytest.approx(0.5)


def _problem(seed=5, n=300):
    basis = BSplineBasis(3, 4)
    data = design(generate(ScenarioConfig("II", n=n, seed=seed)), basis)
    return data, basis, roughness_matrix(basis).J


def test_refit_on_everything_is_the_spline_fit():
    data, basis, J = _problem()
    sel = selection_from_intervals(basis, [(0.0, 1.0)])
    res = refit(data, sel, basis, J, lambda2_grid=[1e-3])
    np.testing.assert_allclose(res.fit.alpha, fit_smooth(data, 1e-3, J).alpha, atol=1e-6)


def test_refit_grid_selects_min_bic():
    data, basis, J = _problem()
    res = refit(data, selection_from_intervals(basis, [(0.0, 0.5)]), basis, J)
    assert len(res.tuning) == 10
    assert res.lambda2 == min(res.tuning, key=lambda r: r["bic"])["lambda2"]


def test_empty_selection():
    data, basis, J = _problem()
    res = refit(data, select_regions(np.zeros(basis.n_basis), basis), basis, J)
    assert res.q == 0 and res.theta.size == 2
    ce = cumulative_effect(res)
    assert (ce.estimate, ce.variance, ce.note) == (0.0, 0.0, "no non-null region")
    with pytest.raises(ValueError, match="no non-null region"):
        variance_curve(res, [0.1])


def test_variance_closed_form_without_smoothing():
    data, basis, J = _problem()
    sel = selection_from_intervals(basis, [(0.0, 0.4)])
    res = refit(data, sel, basis, J, lambda2_grid=[0.0])
    s = np.linspace(0.0, 0.4, 17)
    Bt = np.zeros((s.size, res.q + 2))
    Bt[:, :res.q] = basis.evaluate(s)[:, sel.active]
    Hinv = np.linalg.inv(res.H)
    expected = np.einsum("ij,jk,ik->i", Bt, Hinv, Bt) / res.n
    np.testing.assert_allclose(variance_curve(res, s), expected, rtol=1e-8)
    g = np.r_[region_weights(res), 0.0, 0.0]
    assert cumulative_effect(res).variance == pytest.approx(g @ Hinv @ g / res.n, rel=1e-8)


def test_variance_large_smoothing_limit():
    data, basis, J = _problem()
    sel = selection_from_intervals(basis, [(0.0, 0.6)])
    res = refit(data, sel, basis, J, lambda2_grid=[1e-2])
    res.lambda2 = 1e12
    s = np.linspace(0, 0.6, 9)
    psi = basis.evaluate(s)[:, sel.active] @ res.R[:res.q, res.q:]
    limit = (psi ** 2).sum(axis=1) / res.n
    res_free = refit(data, sel, basis, J, lambda2_grid=[0.0])
    scale = variance_curve(res_free, s).max()
    np.testing.assert_allclose(variance_curve(res, s), limit, rtol=1e-6, atol=1e-12 * scale)


def test_variance_outside_region_is_an_error():
    data, basis, J = _problem()
    res = refit(data, selection_from_intervals(basis, [(0.0, 0.4)]), basis, J)
    with pytest.raises(ValueError, match="outside"):
        variance_curve(res, [0.7])
    assert np.all(variance_curve(res, np.linspace(0, 0.4, 41)) >= 0)


def test_constant_coefficient_cumulative():
    data, basis, J = _problem()
    res = refit(data, selection_from_intervals(basis, [(0.2, 0.4)]), basis, J, lambda2_grid=[0.0])
    # overwrite the refit with coefficients representing the constant 1.5 (partition of unity)
    res.fit.alpha[: res.q] = 1.5
    assert cumulative_effect(res, increment=0.1).estimate == pytest.approx(1.5 * 0.2, abs=1e-12)
    assert cumulative_effect(res, increment=0.1).hazard_ratio == pytest.approx(np.exp(0.1 * 0.3))


def test_curve_is_continuous_on_region():
    data, basis, J = _problem()
    res = refit(data, selection_from_intervals(basis, [(0.0, 0.5)]), basis, J)
    s = np.linspace(0, 0.5, 2001)
    for v in (res.beta(s), np.sqrt(variance_curve(res, s))):
        assert np.max(np.abs(np.diff(v))) < 50 * (s[1] - s[0]) * max(1, np.abs(v).max())


def test_variance_is_the_sandwich_of_the_refit_objective():
    data, basis, J = _problem()
    sel = selection_from_intervals(basis, [(0.0, 0.5)])
    res = refit(data, sel, basis, J, lambda2_grid=[0.02])
    A = np.linalg.inv(res.H + 2 * res.lambda2 * res.P)
    cov = A @ res.H @ A / res.n
    s = np.linspace(0.0, 0.5, 11)
    Bt = np.zeros((s.size, res.H.shape[0]))
    Bt[:, :res.q] = basis.evaluate(s)[:, sel.active]
    np.testing.assert_allclose(variance_curve(res, s), np.einsum("ij,jk,ik->i", Bt, cov, Bt), rtol=1e-8)
