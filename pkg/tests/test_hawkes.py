import math
import warnings

import numpy as np
import pytest

from hstconformal import (
    FitConfig,
    HawkesModel,
    NumericalError,
    PreconditionError,
    SaturationParams,
    fit,
    generate_synthetic,
    intensity,
    log_likelihood,
    log_likelihood_gradient,
    simulate_bin,
    simulate_trajectory,
)
from hstconformal.hawkes import _softplus, _softplus_inv


def _model(mu, A, beta=1.0, cap=math.inf, floor=0.0):
    return HawkesModel(
        mu=np.asarray(mu, float),
        A=np.asarray(A, float),
        beta=beta,
        sat=SaturationParams(cap=cap, floor=floor),
    )


# -- intensity ---------------------------------------------------------------

def test_intensity_hand_value_single_event():
    # one event one bin back, unit decay: lam = 0.5 + 2 * e^-1
    # A > beta trips the stability warning; fine for a one-step hand check
    with pytest.warns(UserWarning, match="explosive"):
        m = _model([0.5], [[2.0]], beta=1.0)
    lam = intensity(m, np.array([[1]]))
    assert abs(lam[0] - (0.5 + 2.0 * math.exp(-1.0))) < 1e-9
    assert abs(lam[0] - 1.2357588823) < 1e-6


def test_intensity_empty_history_is_baseline():
    m = _model([0.3, 0.7], np.full((2, 2), 0.5))
    assert np.allclose(intensity(m, None), [0.3, 0.7])
    assert np.allclose(intensity(m, np.zeros((0, 2))), [0.3, 0.7])


def test_intensity_zero_at_saturation():
    m = _model([0.5], [[1.0]], cap=10.0)
    lam = intensity(m, np.full((5, 1), 2))  # 10 cumulative adoptions
    assert lam[0] == 0.0


def test_intensity_floor_clamps_saturation():
    m = _model([2.0], [[0.0]], cap=10.0, floor=0.25)
    lam = intensity(m, np.full((10, 1), 2))  # far past the cap
    assert abs(lam[0] - 0.25 * 2.0) < 1e-12


def test_intensity_monotone_in_history_counts():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(1, 5))
        m = _model(rng.uniform(0.1, 1, n), rng.uniform(0.05, 0.3 / n, (n, n)),
                   beta=float(rng.uniform(0.5, 1.5)))
        h = rng.integers(0, 4, size=(6, n))
        lo = intensity(m, h)
        h2 = h.copy()
        h2[-1] += 1
        hi = intensity(m, h2)
        assert np.all(hi >= lo - 1e-12)


def test_intensity_scales_with_covariate_multiplier():
    m = _model([0.5, 1.0], np.zeros((2, 2)))
    lam = intensity(m, None, base_mult_row=np.array([2.0, 0.5]))
    assert np.allclose(lam, [1.0, 0.5])


# -- likelihood --------------------------------------------------------------

def test_loglik_hand_value_single_cell():
    # y=3 at lam=2: 3*log(2) - 2 (factorial term omitted)
    m = _model([2.0], [[0.0]])
    ll = log_likelihood(m, np.array([[3]]))
    assert abs(ll - (3 * math.log(2.0) - 2.0)) < 1e-12
    assert abs(ll - 0.0794415417) < 1e-6


def test_loglik_all_zero_panel_is_minus_total_intensity():
    m = _model(np.ones(3), np.zeros((3, 3)))
    Y = np.zeros((7, 3), dtype=int)
    assert abs(log_likelihood(m, Y) - (-21.0)) < 1e-12


def test_loglik_zero_rate_zero_count_contributes_nothing():
    m = _model([0.0], [[0.0]])
    assert log_likelihood(m, np.zeros((4, 1), dtype=int)) == 0.0


def test_loglik_zero_rate_positive_count_is_minus_inf():
    m = _model([0.0], [[0.0]])
    assert log_likelihood(m, np.array([[1]])) == -math.inf


def test_loglik_additive_over_bin_ranges():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(1, 4))
        T = int(rng.integers(4, 20))
        m = _model(rng.uniform(0.2, 1, n), rng.uniform(0, 0.3, (n, n)))
        Y = rng.integers(0, 4, size=(T, n))
        k = int(rng.integers(1, T))
        whole = log_likelihood(m, Y)
        parts = log_likelihood(m, Y, bins=(0, k)) + log_likelihood(m, Y, bins=(k, T))
        assert abs(whole - parts) < 1e-9 * (1 + abs(whole))


def test_loglik_rejects_circuit_mismatch():
    m = _model([1.0], [[0.0]])
    with pytest.raises(PreconditionError):
        log_likelihood(m, np.zeros((3, 2), dtype=int))


# -- gradients ---------------------------------------------------------------

def _random_point(rng, n_max=5, T_max=50):
    n = int(rng.integers(1, n_max + 1))
    T = int(rng.integers(3, T_max + 1))
    Y = rng.integers(0, 5, size=(T, n))
    total = Y.sum()
    m = HawkesModel(
        mu=rng.uniform(0.2, 1.5, n),
        A=rng.uniform(0.01, 0.4 / n, (n, n)),
        beta=float(rng.uniform(0.5, 1.5)),
        sat=SaturationParams(cap=float(max(total, 1) * rng.uniform(2.0, 4.0))),
    )
    return m, Y


def _fd_gradient(model, Y, eps=1e-5):
    # central differences in the unconstrained coordinates
    u_mu = np.log(model.mu)
    u_A = np.log(model.A)
    u_beta = _softplus_inv(model.beta)
    u_cap = math.log(model.sat.cap)

    def rebuild(um, uA, ub, uc):
        return HawkesModel(
            mu=np.exp(um), A=np.exp(uA), beta=_softplus(ub),
            sat=SaturationParams(cap=math.exp(uc), floor=model.sat.floor),
        )

    def ll_at(um, uA, ub, uc):
        return log_likelihood(rebuild(um, uA, ub, uc), Y)

    n = model.n
    g_mu = np.zeros(n)
    for i in range(n):
        up, dn = u_mu.copy(), u_mu.copy()
        up[i] += eps
        dn[i] -= eps
        g_mu[i] = (ll_at(up, u_A, u_beta, u_cap) - ll_at(dn, u_A, u_beta, u_cap)) / (2 * eps)
    g_A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            up, dn = u_A.copy(), u_A.copy()
            up[i, j] += eps
            dn[i, j] -= eps
            g_A[i, j] = (ll_at(u_mu, up, u_beta, u_cap) - ll_at(u_mu, dn, u_beta, u_cap)) / (2 * eps)
    g_beta = (ll_at(u_mu, u_A, u_beta + eps, u_cap) - ll_at(u_mu, u_A, u_beta - eps, u_cap)) / (2 * eps)
    g_cap = (ll_at(u_mu, u_A, u_beta, u_cap + eps) - ll_at(u_mu, u_A, u_beta, u_cap - eps)) / (2 * eps)
    return g_mu, g_A, g_beta, g_cap


def _rel_err(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        m, Y = _random_point(rng)
        g = log_likelihood_gradient(m, Y)
        fd_mu, fd_A, fd_beta, fd_cap = _fd_gradient(m, Y)
        worst = max(
            worst,
            _rel_err(g.d_mu, fd_mu),
            _rel_err(g.d_A, fd_A),
            _rel_err(g.d_beta, fd_beta),
            _rel_err(g.d_cap, fd_cap),
        )
    assert worst < 1e-5


def test_gradient_beta_is_zero_without_excitation():
    rng = np.random.default_rng(9)
    m = _model(rng.uniform(0.5, 1, 3), np.zeros((3, 3)))
    Y = rng.integers(0, 4, size=(12, 3))
    g = log_likelihood_gradient(m, Y)
    assert g.d_beta == 0.0


def test_gradient_symmetry_under_symmetric_data():
    # identical columns and an exchange-symmetric model must give equal
    # baseline gradients
    col = np.array([2, 0, 1, 3, 0, 1])[:, None]
    Y = np.hstack([col, col])
    m = _model([0.6, 0.6], [[0.2, 0.1], [0.1, 0.2]])
    g = log_likelihood_gradient(m, Y)
    assert abs(g.d_mu[0] - g.d_mu[1]) < 1e-12
    assert abs(g.d_A[0, 0] - g.d_A[1, 1]) < 1e-12
    assert abs(g.d_A[0, 1] - g.d_A[1, 0]) < 1e-12


def test_gradient_raises_where_likelihood_not_finite():
    m = _model([0.0], [[0.0]])
    with pytest.raises(NumericalError):
        log_likelihood_gradient(m, np.array([[2]]))


def test_gradient_rejects_covariate_channel():
    m = HawkesModel(mu=np.array([1.0]), A=np.zeros((1, 1)), beta=1.0,
                    cov_coef=np.array([0.5]))
    with pytest.raises(PreconditionError):
        log_likelihood_gradient(m, np.zeros((3, 1), dtype=int))


def test_gradient_cap_is_zero_when_cap_infinite():
    m = _model([1.0], [[0.1]])
    g = log_likelihood_gradient(m, np.array([[1], [2], [0]]))
    assert g.d_cap == 0.0


# -- fitting -----------------------------------------------------------------

def test_fit_recovers_baselines_within_tolerance():
    truth = HawkesModel(
        mu=np.array([0.4, 0.8, 0.6, 0.3, 0.5]),
        A=np.full((5, 5), 0.3 / 5),
        beta=1.0,
    )
    panel, topo, _ = generate_synthetic(5, 2, 500, model=truth, seed=3)
    fitted = fit(panel, topo, FitConfig(epochs=700, seed=1, fit_cap=False))
    rel = np.abs(fitted.mu - truth.mu) / truth.mu
    assert rel.mean() <= 0.25
    assert fitted.meta.loglik_final >= fitted.meta.loglik_init


def test_fit_all_zero_panel_drives_baselines_to_zero():
    Y = np.zeros((50, 3), dtype=int)
    m = fit(Y, None, FitConfig(epochs=500, seed=0))
    assert np.all(m.mu < 1e-3)


def test_fit_is_deterministic_for_a_seed():
    panel, topo, _ = generate_synthetic(4, 2, 60, seed=8)
    cfg = FitConfig(epochs=80, seed=5)
    a = fit(panel, topo, cfg)
    b = fit(panel, topo, cfg)
    assert np.array_equal(a.mu, b.mu)
    assert np.array_equal(a.A, b.A)
    assert a.beta == b.beta and a.sat.cap == b.sat.cap
    c = fit(panel, topo, FitConfig(epochs=80, seed=6))
    assert not np.array_equal(a.mu, c.mu)


def test_fit_meta_reports_run_length_and_improvement():
    panel, topo, _ = generate_synthetic(3, 1, 50, seed=2)
    m = fit(panel, topo, FitConfig(epochs=60, seed=0))
    assert m.meta.epochs_run <= 60
    assert m.meta.n_train_bins == 50
    assert m.meta.loglik_final >= m.meta.loglik_init
    assert m.circuit_ids == topo.circuit_ids


def test_fit_same_substation_mask_zeroes_cross_group_coupling():
    panel, topo, _ = generate_synthetic(6, 2, 80, seed=4)
    m = fit(panel, topo, FitConfig(epochs=60, seed=0, same_substation_only=True))
    S = topo.shared_membership()
    assert np.all(m.A[S == 0] == 0.0)
    assert np.any(m.A[S == 1] > 0.0)


def test_fit_rejects_tiny_panels():
    with pytest.raises(PreconditionError):
        fit(np.zeros((1, 2), dtype=int), None, FitConfig(epochs=5))


# -- simulation --------------------------------------------------------------

def test_simulate_bin_zero_model_draws_zero():
    m = _model([0.0, 0.0], np.zeros((2, 2)))
    s = simulate_bin(m, np.zeros((3, 2), dtype=int), K=50, seed=1)
    assert s.samples.shape == (50, 2)
    assert np.all(s.samples == 0)
    assert s.t == 3


def test_simulate_bin_moments_match_poisson():
    m = _model([4.0], [[0.0]])
    s = simulate_bin(m, None, K=20_000, seed=0)
    mean = s.samples.mean()
    assert abs(mean - 4.0) < 0.05
    assert abs(s.samples.var() - 4.0) < 0.15


def test_simulate_bin_deterministic_per_seed():
    m = _model([1.5, 0.5], np.full((2, 2), 0.1))
    h = np.array([[1, 0], [2, 1]])
    a = simulate_bin(m, h, K=40, seed=9)
    b = simulate_bin(m, h, K=40, seed=9)
    c = simulate_bin(m, h, K=40, seed=10)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_trajectory_first_step_equals_single_bin_simulation():
    m = _model([1.0, 2.0], np.full((2, 2), 0.15))
    h = np.array([[0, 1], [3, 0]])
    traj = simulate_trajectory(m, h, horizon=4, K=25, seed=7)
    s = simulate_bin(m, h, K=25, seed=7)
    assert traj.shape == (25, 4, 2)
    assert np.array_equal(traj[:, 0, :], s.samples)


def test_trajectory_respects_saturation_cap():
    m = _model([3.0, 3.0], np.full((2, 2), 0.2), cap=50.0)
    traj = simulate_trajectory(m, None, horizon=40, K=200, seed=11)
    for k in range(traj.shape[0]):
        per_bin = traj[k].sum(axis=1)
        cum = per_bin.cumsum()
        # totals may overshoot only by the bin that crosses the cap
        over = np.nonzero(cum >= 50.0)[0]
        if over.size:
            first = over[0]
            assert cum[-1] <= 50.0 + per_bin[first]
            assert np.all(per_bin[first + 1:] == 0)


def test_trajectory_mean_flat_without_excitation_or_cap():
    m = _model([3.0], [[0.0]])
    traj = simulate_trajectory(m, None, horizon=5, K=4000, seed=13)
    means = traj[:, :, 0].mean(axis=0)
    assert abs(means[0] - means[-1]) < 0.2
    assert np.all(np.abs(means - 3.0) < 0.2)


def test_simulation_argument_validation():
    m = _model([1.0], [[0.0]])
    with pytest.raises(PreconditionError):
        simulate_bin(m, None, K=0)
    with pytest.raises(PreconditionError):
        simulate_trajectory(m, None, horizon=0, K=5)


# -- model housekeeping --------------------------------------------------------

def test_model_save_load_round_trip_is_value_exact(tmp_path):
    meta_model = fit(
        np.array([[1, 0], [0, 2], [3, 1], [0, 0]]), None, FitConfig(epochs=10)
    )
    path = tmp_path / "model.json"
    meta_model.save(path)
    back = HawkesModel.load(path)
    assert np.array_equal(back.mu, meta_model.mu)
    assert np.array_equal(back.A, meta_model.A)
    assert back.beta == meta_model.beta
    assert back.sat.cap == meta_model.sat.cap
    assert back.meta.loglik_final == meta_model.meta.loglik_final

    inf_model = _model([1.0], [[0.2]])
    p2 = tmp_path / "inf.json"
    inf_model.save(p2)
    assert math.isinf(HawkesModel.load(p2).sat.cap)


def test_explosive_parameters_warn():
    with pytest.warns(UserWarning):
        _model([1.0, 1.0], np.full((2, 2), 1.3), beta=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _model([1.0, 1.0], np.full((2, 2), 0.45), beta=1.0)


def test_model_validation_rejects_bad_shapes():
    with pytest.raises(PreconditionError):
        HawkesModel(mu=np.array([1.0]), A=np.zeros((2, 2)), beta=1.0)
    with pytest.raises(PreconditionError):
        HawkesModel(mu=np.array([-1.0]), A=np.zeros((1, 1)), beta=1.0)
    with pytest.raises(PreconditionError):
        HawkesModel(mu=np.array([1.0]), A=np.zeros((1, 1)), beta=0.0)
    with pytest.raises(PreconditionError):
        SaturationParams(cap=0.0)
    with pytest.raises(PreconditionError):
        SaturationParams(floor=1.0)
