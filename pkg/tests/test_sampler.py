import numpy as np
import pytest
import scipy.sparse as sp

from mscos.errors import InvalidArgument, NumericalError
from mscos.model import Dataset, log_prior
from mscos.sampler import (McmcConfig, PosteriorDraws, Sampler, draw_from_precision,
                           initial_state, mh_accept_probability, run_chain, run_chains)

from oracles import mvn_conditional_check, scalar_conditional_tv, toy_instance


@pytest.mark.parametrize("kind", ["sre", "oh", "mcar"])
def test_scalar_conditionals_quick(kind):
    spec, st, data = toy_instance(kind, 11, missing=True)
    for name in (spec.betas()[0], spec.variances()[-1]):
        assert scalar_conditional_tv(spec, st, data, name, n_grid=801) < 1e-4


@pytest.mark.parametrize("kind", ["sre", "oh"])
def test_eta_conditional_quick(kind):
    spec, st, data = toy_instance(kind, 12)
    mode_err, prec_err = mvn_conditional_check(spec, st, data)
    assert mode_err < 1e-6 and prec_err < 1e-4


def test_draw_from_precision_whitening():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(5, 5))
    A = M @ M.T + 5 * np.eye(5)
    b = rng.normal(size=5)
    x = draw_from_precision(A, b, np.random.default_rng(7))
    z = np.random.default_rng(7).standard_normal(5)
    L = np.linalg.cholesky(A)
    np.testing.assert_allclose(L.T @ (x - np.linalg.solve(A, b)), z, atol=1e-12)
    with pytest.raises(NumericalError):
        draw_from_precision(-np.eye(3), np.zeros(3), rng)


def test_draw_from_precision_moments():
    A = np.array([[2.0, 0.6], [0.6, 1.0]])
    b = np.array([1.0, -1.0])
    rng = np.random.default_rng(1)
    x = np.array([draw_from_precision(A, b, rng) for _ in range(40000)])
    np.testing.assert_allclose(x.mean(0), np.linalg.solve(A, b), atol=0.02)
    np.testing.assert_allclose(np.cov(x.T), np.linalg.inv(A), atol=0.02)


def test_mh_accept_probability():
    assert mh_accept_probability(0.0, 1.0) == 1.0
    assert mh_accept_probability(0.0, -np.log(4)) == pytest.approx(0.25)
    assert mh_accept_probability(0.0, -np.inf) == 0.0


def test_detailed_balance_three_states():
    """Random-walk Metropolis on {0,1,2} with the shared acceptance rule."""
    pi = np.array([0.2, 0.5, 0.3])
    T = np.zeros((3, 3))
    for i in range(3):
        for j in (i - 1, i + 1):
            if 0 <= j < 3:
                T[i, j] = 0.5 * mh_accept_probability(np.log(pi[i]), np.log(pi[j]))
        T[i, i] = 1 - T[i].sum()
    flow = pi[:, None] * T
    np.testing.assert_allclose(flow, flow.T, atol=1e-15)
    np.testing.assert_allclose(pi @ T, pi, atol=1e-15)


def test_banded_psi_matches_dense():
    spec, st, data = toy_instance("mcar", 4)
    smp = Sampler(spec, data, np.random.default_rng(0))
    A, b = smp.psi_conditional(st)
    band = smp._band
    fac = band.factor(A)
    Ad = A.toarray()
    mean = np.linalg.solve(Ad, b)
    # the draw is affine in z, so unit vectors recover its covariance
    xs = np.array([band.draw(fac, b, None, z=zz) for zz in np.eye(b.size)]) - band.draw(
        fac, b, None, z=np.zeros(b.size))
    np.testing.assert_allclose(band.draw(fac, b, None, z=np.zeros(b.size)), mean, atol=1e-10)
    np.testing.assert_allclose(xs.T @ xs, np.linalg.inv(Ad), atol=1e-10)


def test_mh_rejects_outside_support():
    spec, st, data = toy_instance("sre", 5)
    smp = Sampler(spec, data, np.random.default_rng(0), {"phi": 1e6})
    n_acc = sum(smp.mh_update_bounded("phi", st)[1] for _ in range(50))
    assert n_acc <= 2
    assert 0 <= st.phi <= 10
    assert smp.bounded_log_target("phi", 10.5, st) == -np.inf


def test_initial_state_in_support():
    for kind in ("sre", "oh", "mcar"):
        spec, _, data = toy_instance(kind, 6)
        st = initial_state(spec, data)
        assert np.isfinite(log_prior(spec, st))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        McmcConfig(n_iter=10, burn_in=10)
    with pytest.raises(InvalidArgument):
        McmcConfig(thin=0)
    with pytest.raises(InvalidArgument):
        McmcConfig(step_sizes={"phi": 0.0})
    assert McmcConfig(n_iter=10, burn_in=3, thin=2).n_kept == 4


@pytest.mark.parametrize("kind", ["sre", "oh", "mcar"])
def test_chain_determinism(kind):
    spec, _, data = toy_instance(kind, 8)
    cfg = McmcConfig(n_iter=60, burn_in=20, thin=2, seed=42)
    a, b = run_chain(spec, data, cfg), run_chain(spec, data, cfg)
    assert a.n_draws == 20
    np.testing.assert_array_equal(a.columns()[1], b.columns()[1])
    c = run_chain(spec, data, cfg, chain=1)
    assert not np.array_equal(a.columns()[1], c.columns()[1])


def test_adaptation_frozen_after_burn_in():
    spec, _, data = toy_instance("sre", 9)
    cfg = McmcConfig(n_iter=200, burn_in=100, seed=1)
    d = run_chain(spec, data, cfg)
    assert d.acceptance["step_phi"] != cfg.step_sizes["phi"]
    # the same burn-in followed by a different post-burn-in length ends on
    # the same step size
    d2 = run_chain(spec, data, McmcConfig(n_iter=150, burn_in=100, seed=1))
    assert d.acceptance["step_phi"] == d2.acceptance["step_phi"]
    np.testing.assert_array_equal(d2.scalars["phi"], d.scalars["phi"][:50])
    off = run_chain(spec, data, McmcConfig(n_iter=50, burn_in=10, seed=1, adapt=False))
    assert off.acceptance["step_phi"] == pytest.approx(cfg.step_sizes["phi"])


def test_draws_columns_round_trip():
    spec, _, data = toy_instance("oh", 2)
    draws = run_chains(spec, data, McmcConfig(n_iter=30, burn_in=10, seed=3), n_chains=2)
    names, mat = draws[0].columns()
    back = PosteriorDraws.from_columns("oh", spec.variables, names, mat)
    np.testing.assert_array_equal(back.columns()[1], mat)
    assert names[-1] == "eta[1]"
    both = PosteriorDraws.concatenate(draws)
    assert both.n_draws == 40
    st = both.state(0)
    assert st.eta.shape == (2,) and isinstance(st.beta0, float)


def test_sparse_psi_precision_is_sparse():
    spec, st, data = toy_instance("mcar", 3)
    A, _ = Sampler(spec, data, np.random.default_rng(0)).psi_conditional(st)
    assert sp.issparse(A)
    np.testing.assert_allclose(A.toarray(), A.toarray().T, atol=1e-13)


def test_univariate_chain_runs():
    spec, _, data = toy_instance("sre", 2)
    from oracles import toy_spec
    uni = toy_spec("sre", variables=(1,))
    d = run_chain(uni, Dataset(data.y1, None), McmcConfig(n_iter=30, burn_in=5))
    assert set(d.scalars) == {"beta1", "sigma2_1", "sigma2_eta", "phi"}
