import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from funbuffer.basis import BSplineBasis, roughness_matrix
from funbuffer.coxcore import (NumericalError, chol_jitter, grad_hess, gram_surrogate, logpl,
                               surrogate, value_grad_hess)
from funbuffer.survdata import DesignedData
from tests.conftest import brute_logpl, random_designed


def _two():
    return DesignedData(np.zeros((2, 0)), np.eye(2), np.array([2.0, 1.0]), np.ones(2))


def test_two_subject_closed_form():
    data = _two()
    e1, e2 = 0.3, -0.7
    expected = e1 - np.log(np.exp(e1)) + e2 - np.log(np.exp(e1) + np.exp(e2))
    assert logpl(data, np.array([e1, e2])) == pytest.approx(expected, abs=1e-14)
    g, H = grad_hess(data, np.zeros(2))
    # -l = log(e^a + e^b) - b at zero: gradient (1/2, -1/2), Hessian 1/4 [[1,-1],[-1,1]]
    np.testing.assert_allclose(g, [0.5, -0.5], atol=1e-15)
    np.testing.assert_allclose(H, 0.25 * np.array([[1, -1], [-1, 1]]), atol=1e-15)


def test_null_model_counts_risk_sets(rng):
    data = random_designed(rng, n=20)
    order, _ = data.blocks[0]
    ranks = np.empty(20)
    ranks[order] = np.arange(1, 21)
    assert logpl(data, np.zeros(6)) == pytest.approx(-np.sum(data.event * np.log(ranks)))


@pytest.mark.parametrize("ties,strata", [(False, None), (True, None), (True, 3)])
def test_matches_brute_force(rng, ties, strata):
    for _ in range(5):
        data = random_designed(rng, n=25, ties=ties, strata=strata)
        a = rng.normal(size=6)
        assert logpl(data, a) == pytest.approx(brute_logpl(data, a), abs=1e-10)


def test_shift_invariance(rng):
    data = random_designed(rng, n=20, L=0, p=3)
    data_shift = DesignedData(np.zeros((20, 0)), np.c_[data.Z, np.ones(20)], data.time, data.event)
    a = rng.normal(size=3)
    assert logpl(data_shift, np.r_[a, 4.2]) == pytest.approx(logpl(data, a), abs=1e-10)


def test_gradient_against_central_differences(rng):
    worst = 0.0
    for _ in range(20):
        data = random_designed(rng, n=int(rng.integers(8, 51)), L=3, p=2, ties=bool(rng.integers(2)))
        a = rng.normal(0, 0.5, 5)
        g = grad_hess(data, a)[0]
        h = 1e-5
        fd = np.array([-(logpl(data, a + h * e) - logpl(data, a - h * e)) / (2 * h) for e in np.eye(5)])
        worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-3))
    assert worst < 1e-6


def test_hessian_against_gradient_differences(rng):
    data = random_designed(rng, n=40, ties=True, strata=2)
    a = rng.normal(0, 0.3, 6)
    _, H = grad_hess(data, a)
    h = 1e-6
    fd = np.column_stack([(grad_hess(data, a + h * e)[0] - grad_hess(data, a - h * e)[0]) / (2 * h)
                          for e in np.eye(6)])
    np.testing.assert_allclose(H, fd, atol=1e-6 * np.abs(H).max())


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 40))
def test_hessian_is_symmetric_psd(seed, n):
    r = np.random.default_rng(seed)
    data = random_designed(r, n=n, ties=True)
    _, H = grad_hess(data, r.normal(size=6))
    np.testing.assert_array_equal(H, H.T)
    assert np.linalg.eigvalsh(H).min() >= -1e-8 * max(np.trace(H), 1e-300)


def test_value_grad_hess_consistent(rng):
    data = random_designed(rng)
    a = rng.normal(size=6)
    ll, g, H = value_grad_hess(data, a)
    g2, H2 = grad_hess(data, a)
    assert ll == pytest.approx(logpl(data, a), abs=1e-12)
    np.testing.assert_array_equal(g, g2)
    np.testing.assert_array_equal(H, H2)


def test_surrogate_identities(rng):
    data = random_designed(rng, n=60)
    a0 = rng.normal(0, 0.3, 6)
    D = np.eye(4)
    q = surrogate(data, a0, 0.0, D)
    g, H = grad_hess(data, a0)
    np.testing.assert_allclose(q.V.T @ q.V, H, rtol=1e-8, atol=1e-12)
    # gradient of 0.5 ||Y - V a||^2 at a0 equals grad(-l)
    np.testing.assert_allclose(q.V.T @ (q.V @ a0 - q.Y), g, atol=1e-8)
    assert q.Vbar is q.V and q.Ybar is q.Y
    newton = a0 - linalg.solve(H, g)
    np.testing.assert_allclose(linalg.lstsq(q.V, q.Y)[0], newton, atol=1e-8)


def test_augmented_rows(rng):
    basis = BSplineBasis(3, 1)
    data = random_designed(rng, n=50, L=basis.n_basis, p=2)
    pm = roughness_matrix(basis)
    lam = 0.01
    q = surrogate(data, np.zeros(7), lam, pm.D)
    extra = q.Vbar[q.V.shape[0]:]
    assert extra.shape[0] == pm.D.shape[0]
    np.testing.assert_array_equal(extra[:, 5:], 0.0)
    np.testing.assert_allclose(extra.T @ extra, 2 * data.n * lam * pm.J_star(2), atol=1e-10)
    G, c = gram_surrogate(*grad_hess(data, np.zeros(7))[::-1], np.zeros(7), data.n, lam, pm.J_star(2))
    np.testing.assert_allclose(G, q.Vbar.T @ q.Vbar / data.n, atol=1e-10)
    np.testing.assert_allclose(c, q.Vbar.T @ q.Ybar / data.n, atol=1e-10)


def test_jitter_escalates_then_fails():
    A = np.diag([1.0, 0.0])
    U, eps = chol_jitter(A)
    assert eps > 0
    np.testing.assert_allclose(U.T @ U, A + eps * np.eye(2))
    with pytest.raises(NumericalError, match="stronger smoothness"):
        chol_jitter(np.diag([1.0, -1.0]))


def test_value_survives_extreme_linear_predictors():
    data = DesignedData(np.zeros((3, 0)), np.array([[0.0], [1.0], [-1.0]]), np.array([3.0, 2.0, 1.0]),
                        np.ones(3))
    a = np.array([900.0])  # eta spans 1800: a global shift would underflow the latest risk set
    expected = 0.0 - 0.0 + 900.0 - np.logaddexp(0.0, 900.0) + (-900.0) - np.logaddexp.reduce([0.0, 900.0, -900.0])
    with np.errstate(divide="raise", invalid="raise"):
        assert logpl(data, a) == pytest.approx(expected)
