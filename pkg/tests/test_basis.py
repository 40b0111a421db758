import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mscos.basis import (CarStructure, CovarianceParams, exp_covariance, mcar_precision,
                         moran_basis, morans_operator, select_knots)
from mscos.errors import InvalidArgument, NumericalError
from mscos.supports import build_grid_support


def dense_mcar(W, rho, tau, nu2):
    """Dense Kronecker precision built from scratch."""
    D = np.diag(W.sum(axis=1))
    Sigma = nu2 * np.array([[1.0, tau], [tau, 1.0]])
    return np.kron(np.linalg.inv(Sigma), D - rho * W)


def test_moran_2x2():
    W = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(morans_operator(W), [[-0.5, 0.5], [0.5, -0.5]], atol=1e-15)
    G = moran_basis(W, 1).G
    np.testing.assert_allclose(G[:, 0], [1 / np.sqrt(2)] * 2, atol=1e-12)


def test_moran_zero_matrix():
    np.testing.assert_array_equal(morans_operator(np.zeros((4, 4))), 0)


def test_moran_asymmetric():
    with pytest.raises(InvalidArgument):
        morans_operator(np.array([[0.0, 1.0], [0.0, 0.0]]))


@pytest.mark.parametrize("side", [3, 7, 10, 20])
def test_moran_rows_and_orthonormality(side):
    W = build_grid_support(side, side).weights()
    M = morans_operator(W)
    assert np.abs(M.sum(axis=1)).max() < 1e-10
    n = side * side
    B = moran_basis(W, n - 1)
    assert np.abs(B.G.T @ B.G - np.eye(n - 1)).max() < 1e-8
    assert np.all(np.diff(B.eigenvalues) <= 1e-12)


def test_moran_basis_eigenvectors_and_signs():
    W = build_grid_support(10, 10).weights()
    B = moran_basis(W, 50)
    assert B.G.shape == (100, 50)
    M = morans_operator(W)
    np.testing.assert_allclose(M @ B.G, B.G * B.eigenvalues, atol=1e-10)
    for col in B.G.T:
        nz = np.flatnonzero(np.abs(col) > 1e-10 * np.abs(col).max())
        assert col[nz[0]] > 0


def test_moran_basis_rank_bounds():
    W = build_grid_support(3, 3).weights()
    with pytest.raises(InvalidArgument):
        moran_basis(W, 9)
    with pytest.raises(InvalidArgument):
        moran_basis(W, 0)


def test_moran_basis_permutation_invariance():
    """Relabelling units permutes the spanned eigenspaces accordingly."""
    W = build_grid_support(5, 4).weights()
    perm = np.random.default_rng(1).permutation(W.shape[0])
    B = moran_basis(W, 8)
    Bp = moran_basis(W[np.ix_(perm, perm)], 8)
    np.testing.assert_allclose(B.eigenvalues, Bp.eigenvalues, atol=1e-10)
    # compare projectors, which ignore sign and rotation inside eigenspaces
    P = B.G @ B.G.T
    Pp = Bp.G @ Bp.G.T
    gap = np.abs(np.diff(moran_basis(W, 9).eigenvalues))[-1]
    if gap > 1e-8:
        np.testing.assert_allclose(P[np.ix_(perm, perm)], Pp, atol=1e-8)


def test_constant_in_null_space():
    W = build_grid_support(6, 6).weights()
    M = morans_operator(W)
    assert abs(np.ones(36) @ M @ np.ones(36)) < 1e-10


def test_knots_single_is_nearest_center():
    g = build_grid_support(20, 20)
    k = select_knots(g.centroids, 1, seed=3)
    d = np.linalg.norm(g.centroids - 0.5, axis=1)
    assert np.linalg.norm(k[0] - 0.5) == pytest.approx(d.min())


def test_knots_all():
    g = build_grid_support(4, 4)
    np.testing.assert_array_equal(select_knots(g.centroids, 16), g.centroids)


def test_knots_too_many():
    with pytest.raises(InvalidArgument):
        select_knots(np.zeros((3, 2)), 4)


def test_knots_deterministic():
    g = build_grid_support(20, 20)
    np.testing.assert_array_equal(select_knots(g.centroids, 50, seed=7),
                                  select_knots(g.centroids, 50, seed=7))


def min_dist(pts):
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    return d[np.triu_indices(len(pts), 1)].min()


def test_knots_space_filling_against_random_subsets():
    g = build_grid_support(20, 20)
    knots = select_knots(g.centroids, 50, seed=0)
    rng = np.random.default_rng(11)
    rand = [min_dist(g.centroids[rng.choice(400, 50, replace=False)]) for _ in range(100)]
    assert min_dist(knots) >= np.median(rand)


def test_exp_covariance_examples():
    knots = np.array([[0.0, 0.0], [1.0, 0.0]])
    K = exp_covariance(knots, CovarianceParams(1.0, 0.1))
    assert K[0, 1] == pytest.approx(0.904837418, abs=1e-9)
    np.testing.assert_allclose(np.diag(K), 1.0 + 1e-8)
    K2 = exp_covariance(knots, CovarianceParams(2.5, 1e6))
    np.testing.assert_allclose(K2, 2.5 * np.eye(2), atol=1e-7)


def test_exp_covariance_jitter_scales_with_variance():
    knots = np.array([[0.0, 0.0], [0.3, 0.4]])
    K = exp_covariance(knots, CovarianceParams(4.0, 0.0))
    np.testing.assert_allclose(np.diag(K), 4.0 * (1 + 1e-8))


def test_exp_covariance_duplicate_knots():
    with pytest.raises(InvalidArgument):
        exp_covariance(np.zeros((2, 2)), CovarianceParams(1.0, 1.0))


def test_exp_covariance_phi_sweep_factorizes():
    g = build_grid_support(20, 20)
    knots = select_knots(g.centroids, 50)
    for phi in np.linspace(0, 10, 100):
        K = exp_covariance(knots, CovarianceParams(1.0, phi))
        np.linalg.cholesky(K)


def test_exp_covariance_gives_up_eventually(monkeypatch):
    import mscos.basis as b
    monkeypatch.setattr(b, "MAX_JITTER", 1e-6)
    # not a metric: the resulting "correlation" is indefinite
    dist = np.array([[0.0, 0.0, 10.0], [0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    with pytest.raises(NumericalError):
        b.exp_correlation(dist, 5.0)


def grid_car(side):
    return CarStructure(build_grid_support(side, side).weights())


def test_mcar_tau_zero_separates():
    car = grid_car(3)
    psi = np.random.default_rng(0).normal(size=18)
    prec = mcar_precision(car, 0.7, 0.0, 2.0)
    Q = car.Q(0.7)
    sep = (psi[:9] @ Q @ psi[:9] + psi[9:] @ Q @ psi[9:]) / 2.0
    assert prec.quad_form(psi) == pytest.approx(sep, rel=1e-12)


def test_mcar_rho_zero_logdet():
    car = grid_car(4)
    assert car.logdet(0.0) == pytest.approx(np.sum(np.log(car.d)), rel=1e-12)


def test_mcar_2x2_dense_oracle():
    W = build_grid_support(2, 2).weights()
    car = CarStructure(W)
    prec = mcar_precision(car, 0.9, 0.2, 1.5)
    dense = dense_mcar(W, 0.9, 0.2, 1.5)
    one = np.ones(8)
    assert abs(prec.quad_form(one) - one @ dense @ one) < 1e-10
    np.testing.assert_allclose(prec.sparse().toarray(), dense, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.floats(0.0, 0.99), st.floats(-0.95, 0.95),
       st.floats(0.1, 5.0))
def test_mcar_logdet_and_quad_dense(rows, cols, rho, tau, nu2):
    W = build_grid_support(rows, cols).weights()
    car = CarStructure(W)
    prec = mcar_precision(car, rho, tau, nu2)
    dense = dense_mcar(W, rho, tau, nu2)
    assert prec.logdet() == pytest.approx(np.linalg.slogdet(dense)[1], abs=1e-8)
    psi = np.random.default_rng(rows * 10 + cols).normal(size=2 * rows * cols)
    assert prec.quad_form(psi) == pytest.approx(psi @ dense @ psi, rel=1e-10, abs=1e-10)
    np.testing.assert_allclose(prec.matvec(psi), dense @ psi, atol=1e-10)


def test_mcar_errors():
    car = grid_car(3)
    with pytest.raises(InvalidArgument):
        mcar_precision(car, 0.5, 1.0, 1.0)
    with pytest.raises(InvalidArgument):
        mcar_precision(car, 1.0, 0.0, 1.0)
    with pytest.raises(InvalidArgument):
        mcar_precision(car, 0.5, 0.0, 0.0)


def test_car_pd_near_upper_bound():
    car = grid_car(20)
    car.check_rho_bounds(0.0, 1.0)
    assert car.is_pd(1 - 1e-6)
