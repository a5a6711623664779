import numpy as np
import pytest

from ctdls import estimator as E
from ctdls import excitation as X


def scalar_history(phis, alpha=1.0, T=5.0, h=1e-3, interval=1.0):
    """Histories of scalar sensors with constant regressors ``phis``."""
    M = int(round(T / h))
    N = len(phis)
    reg = np.broadcast_to(np.asarray(phis, float)[:, None, None], (N, M + 1, 1)).copy()
    y = np.zeros((N, M + 1))
    est = E.DistributedLS(np.eye(N), dt=h, fusion_interval=interval, alpha=alpha).fit(reg, y)
    return est.history_


def test_zero_regressors_give_prior_only():
    hist = scalar_history([0.0, 0.0], alpha=0.25)
    R = X.accumulate_R(hist)
    np.testing.assert_array_equal(R, np.full(5, 4.0))
    assert np.all(X.continuous_R(hist) == 4.0)


def test_unit_regressor_energy_per_epoch():
    hist = scalar_history([1.0])
    R = X.accumulate_R(hist)
    np.testing.assert_allclose(R, np.arange(5) + 1 + 1, atol=1e-12)


def test_lambda_series_two_scalar_sensors():
    hist = scalar_history([1.0, 0.0])
    lam = X.lambda_min_series(hist, diameter=1)
    np.testing.assert_allclose(lam, np.arange(5) + 2, atol=1e-12)


def test_lambda_series_before_diameter_is_prior_sum():
    hist = scalar_history([1.0, 3.0], alpha=0.5)
    lam = X.lambda_min_series(hist, diameter=3)
    assert lam[0] == lam[1] == lam[2] == 4.0
    assert lam[3] > 4.0


def test_rlc_R_matches_raw_tape_recomputation(rlc_quiet, rlc_quiet_dls):
    phi = rlc_quiet.model_regressors[:, :-1]
    h, per = rlc_quiet.h, rlc_quiet.steps_per_fusion
    energy = np.sum(phi**2, axis=(0, 2)) * h  # pooled |phi|^2 h per step
    windows = energy.reshape(-1, per).sum(axis=1)
    oracle = np.cumsum(windows) + 1 / 3.0
    np.testing.assert_allclose(X.accumulate_R(rlc_quiet_dls), oracle, rtol=0, atol=1e-8)


def test_rlc_lambda_matches_raw_tape_recomputation(rlc_quiet, rlc_quiet_dls, ring6):
    phi = rlc_quiet.model_regressors[:, :-1]
    h, per = rlc_quiet.h, rlc_quiet.steps_per_fusion
    D = ring6[0].diameter
    lam = X.lambda_min_series(rlc_quiet_dls, D)
    for n in (0, 2, 3, 50, 299):
        stop = max(n - D + 1, 0) * per
        block = phi[:, :stop].reshape(-1, 3)
        total = block.T @ block * h + 6 * np.eye(3) / 3.0
        assert lam[n] == pytest.approx(np.linalg.eigvalsh(total)[0], rel=1e-9)


def test_series_are_monotone(rlc_quiet_dls, ring6, synth_dls, ring12):
    for hist, top in ((rlc_quiet_dls, ring6[0]), (synth_dls, ring12[0])):
        s = X.excitation_series(hist, top.diameter)
        assert np.all(np.diff(s.R) >= 0)
        assert np.all(np.diff(s.lambda_min) >= 0)
        assert np.all(np.diff(s.single_lambda, axis=0) >= -1e-9 * s.single_lambda[1:])


def test_network_eigenvalue_dominates_single_sensors(rlc_quiet_dls, ring6):
    D = ring6[0].diameter
    s = X.excitation_series(rlc_quiet_dls, D)
    for n in range(s.R.size):
        lagged = max(n - D + 1, 0)
        assert s.lambda_min[n] >= s.single_lambda[lagged].max() - 1e-9


def test_single_synthetic_sensor_denominator_is_stuck(synth_dls):
    s = X.excitation_series(synth_dls, 4)
    np.testing.assert_allclose(s.single_lambda, 1 / 3.0, rtol=1e-12)


def test_single_node_pair_matches_single_agent_pair():
    hist = scalar_history([0.7], T=6.0)
    s = X.excitation_series(hist, diameter=1)
    lam_max = 1.0
    np.testing.assert_allclose(s.R - lam_max, s.single_energy[1:, 0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(s.lambda_min, s.single_lambda[:-1, 0], rtol=0, atol=1e-12)


def test_verdict_constant_series():
    v = X.cec_verdict(np.full(20, 0.3), window=10)
    assert v.trend == 0.0
    assert not v.satisfied_hint


def test_verdict_decaying_series():
    n = np.arange(1, 41)
    v = X.cec_verdict(2.0 / n, window=20)
    assert v.trend < 0
    assert v.satisfied_hint
    assert not X.cec_verdict(200.0 / n, window=20).satisfied_hint


def test_verdict_edge_cases():
    with pytest.raises(ValueError):
        X.cec_verdict(np.ones(5), window=3)
    v = X.cec_verdict(np.r_[np.ones(10), -np.ones(10)], window=10)
    assert np.isnan(v.trend) and not v.satisfied_hint


def test_pe_window_zero_regressors():
    assert not np.any(X.pe_window_check(np.zeros((2, 100, 3)), 0.01, 0.5, 1e-6))


def test_pe_window_unit_scalar():
    phi = np.ones((1, 3000, 1))
    lam = X.window_information(phi, 1e-3, 1000)
    np.testing.assert_allclose(lam, 1.0, atol=1e-12)
    assert np.all(X.pe_window_check(phi, 1e-3, 1.0, 1.0 - 1e-9))
    assert not np.any(X.pe_window_check(phi, 1e-3, 1.0, 1.0 + 1e-9))
    with pytest.raises(ValueError):
        X.pe_window_check(phi, 1e-3, 0.0, 1.0)


def test_pe_window_rlc_joint_but_not_individual(rlc_quiet):
    phi = rlc_quiet.model_regressors[:, :-1]
    T0 = 4 * np.pi
    joint = X.window_information(phi, rlc_quiet.h, int(round(T0 / rlc_quiet.h)), stride=200)
    alpha = 0.5 * joint.min()
    assert alpha > 0
    assert np.all(X.pe_window_check(phi, rlc_quiet.h, T0, alpha, stride=200))
    for i in range(6):
        assert not np.any(X.pe_window_check(phi, rlc_quiet.h, T0, alpha, stride=200, sensors=[i]))
