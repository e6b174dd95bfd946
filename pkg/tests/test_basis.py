import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.interpolate import BSpline

from funbuffer.basis import (BasisSpec, BSplineBasis, build_basis, functional_design_row,
                             quadrature_grid, roughness_matrix)


def test_default_basis_has_thirty_functions():
    assert build_basis(BasisSpec(degree=3, n_inner=26)).n_basis == 30


def test_hat_functions_by_hand():
    basis = BSplineBasis(degree=1, n_inner=1)
    np.testing.assert_allclose(basis.evaluate([0.25])[0], [0.5, 0.5, 0.0], atol=1e-15)


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_matches_scipy_bspline(degree):
    basis = BSplineBasis(degree, 6, (2.0, 5.0))
    s = np.linspace(2.0, 5.0, 301)
    ref = BSpline.design_matrix(basis.to_unit(s), basis.t, degree).toarray()
    np.testing.assert_allclose(basis.evaluate(s), ref, atol=1e-13)


def test_derivatives_match_scipy():
    basis = BSplineBasis(3, 5)
    s = np.linspace(0, 1, 97)
    for k in range(basis.n_basis):
        c = np.zeros(basis.n_basis)
        c[k] = 1.0
        spl = BSpline(basis.t, c, 3)
        for d in (1, 2):
            np.testing.assert_allclose(basis.evaluate(s, d)[:, k], spl.derivative(d)(s), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(degree=st.integers(1, 5), n_inner=st.integers(1, 30),
       s=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_partition_of_unity_and_local_support(degree, n_inner, s):
    basis = BSplineBasis(degree, n_inner)
    B = basis.evaluate(np.array(s))
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(B >= -1e-15)
    assert np.all((B > 0).sum(axis=1) <= degree + 1)


def test_support_spans_at_most_degree_plus_one_intervals():
    basis = BSplineBasis(3, 10)
    for k in range(basis.n_basis):
        lo, hi = basis.support(k)
        spanned = np.sum((basis.breaks[:-1] >= lo - 1e-12) & (basis.breaks[1:] <= hi + 1e-12))
        assert 1 <= spanned <= 4


def test_groups_are_consecutive_windows():
    basis = BSplineBasis(3, 26)
    groups = basis.groups()
    assert len(groups) == 27
    for j, g in enumerate(groups):
        assert g.tolist() == list(range(j, j + 4))


@pytest.mark.parametrize("bad", [dict(degree=0), dict(knots=[0.5, 0.3]), dict(knots=[0.0, 0.5])])
def test_invalid_specs_raise(bad):
    with pytest.raises(ValueError):
        BSplineBasis(**{"degree": 3, "n_inner": 4, **bad})


def test_roughness_matrix_against_adaptive_quadrature():
    basis = BSplineBasis(3, 5)
    J = roughness_matrix(basis).J

    def second(k, s):
        return basis.evaluate(np.atleast_1d(s), 2)[0, k]

    pts = basis.breaks[1:-1].tolist()
    for i in range(basis.n_basis):
        for j in range(i, basis.n_basis):
            ref = integrate.quad(lambda s: second(i, s) * second(j, s), 0, 1, points=pts,
                                 epsabs=1e-11, limit=200)[0]
            assert abs(J[i, j] - ref) < 1e-8


@pytest.mark.parametrize("degree,n_inner", [(2, 3), (3, 26), (4, 9)])
def test_affine_null_space(degree, n_inner):
    basis = BSplineBasis(degree, n_inner)
    J = roughness_matrix(basis).J
    # Greville abscissae reproduce linear functions exactly
    gre = np.array([basis.t[k + 1:k + degree + 1].mean() for k in range(basis.n_basis)])
    for b in (np.ones(basis.n_basis), gre, 3.0 - 2.0 * gre):
        assert abs(b @ J @ b) <= 1e-10 * max(1.0, np.abs(J).max())
    s = np.linspace(0, 1, 11)
    np.testing.assert_allclose(basis.evaluate(s) @ gre, s, atol=1e-12)


def test_penalty_factorisation_and_embedding():
    basis = BSplineBasis(3, 12)
    pm = roughness_matrix(basis)
    np.testing.assert_allclose(pm.D.T @ pm.D, pm.J, atol=1e-10 * np.abs(pm.J).max())
    assert pm.rank == basis.n_basis - 2
    Js = pm.J_star(2)
    assert Js.shape == (basis.n_basis + 2,) * 2
    np.testing.assert_array_equal(Js[-2:], 0.0)
    assert np.all(np.linalg.eigvalsh(pm.J) > -1e-10 * np.abs(pm.J).max())


def test_roughness_needs_degree_two():
    with pytest.raises(ValueError):
        roughness_matrix(BSplineBasis(1, 4))


def test_quadrature_grid_contains_knots():
    basis = BSplineBasis(3, 7, knots=[0.1, 0.13, 0.5, 0.77, 0.8, 0.9, 0.95])
    grid, w = quadrature_grid(basis, 101)
    assert np.all(np.isin(basis.breaks, grid))
    assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_design_row_identities():
    basis = BSplineBasis(3, 26)
    np.testing.assert_array_equal(functional_design_row(basis, lambda s: np.zeros_like(s)), 0.0)
    assert functional_design_row(basis, np.ones_like).sum() == pytest.approx(1.0, abs=1e-12)
    wide = BSplineBasis(3, 4, (90.0, 2100.0))
    assert functional_design_row(wide, np.ones_like).sum() == pytest.approx(2010.0, rel=1e-12)


def test_design_row_against_refined_grid():
    basis = BSplineBasis(3, 2)
    exact = np.array([integrate.quad(lambda s: s * basis.evaluate([s])[0, k], 0, 1,
                                     points=[1 / 3, 2 / 3], epsabs=1e-13)[0]
                      for k in range(basis.n_basis)])
    fine = functional_design_row(basis, lambda s: s, n_grid=100_001)
    np.testing.assert_allclose(fine, exact, atol=1e-8)
    # default grid: trapezoid error is h^2/12 * [f'(1) - f'(0)] with f = s B_k(s), f'(1) <= 10
    row = functional_design_row(basis, lambda s: s)
    np.testing.assert_allclose(row, exact, atol=1e-6 / 12 * 10 * 1.01)
