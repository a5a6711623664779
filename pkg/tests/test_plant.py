import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ctdls.plant import (
    RLC_INPUTS,
    PlantScenario,
    ScenarioError,
    Waveform,
    assemble_theta,
    rlc_scenario,
    simulate_network,
    synthetic12_scenario,
    synthetic_support,
)
from ctdls.signal import NoiseStream, PolynomialInS


def test_assemble_theta_examples():
    one = PolynomialInS.one()
    np.testing.assert_array_equal(
        assemble_theta(PolynomialInS((2.0,)), PolynomialInS((3.0,), monic=False), one), [-2, 3]
    )
    np.testing.assert_array_equal(
        assemble_theta(one, PolynomialInS((1.0, 1.0), monic=False), PolynomialInS((0.5,))), [1, 1, 0.5]
    )
    np.testing.assert_array_equal(assemble_theta(one, PolynomialInS((7.0,), monic=False), one), [7])


def test_rlc_parameter_vector():
    np.testing.assert_allclose(rlc_scenario().theta, [-0.6, -0.04, 0.2])
    np.testing.assert_allclose(rlc_scenario(1, 1, 1).theta, [-1, -1, 1])
    np.testing.assert_allclose(rlc_scenario(R=0, L=2, C=0.5).theta, [0, -1, 0.5])
    with pytest.raises(ScenarioError):
        rlc_scenario(L=0)


def test_rlc_default_inputs():
    t = np.linspace(0, 10, 101)
    np.testing.assert_allclose(RLC_INPUTS[0](t), 2 * np.cos(t), atol=1e-12)
    np.testing.assert_allclose(RLC_INPUTS[3](t), 2 * np.cos(0.5 * t) + np.sin(0.5 * t), atol=1e-12)
    np.testing.assert_allclose(RLC_INPUTS[5](t), 5 * np.cos(0.5 * t), atol=1e-12)


def test_rlc_regressor_layout(rlc_quiet):
    tr = rlc_quiet
    h = tr.h
    y = tr.phi0[:, :, 0]
    np.testing.assert_array_equal(y, tr.y)
    left = np.concatenate([np.zeros((6, 1)), np.cumsum(y[:, :-1], axis=1) * h], axis=1)
    np.testing.assert_allclose(tr.phi0[:, :, 1], left, atol=1e-10)
    np.testing.assert_array_equal(tr.phi0[:, :, 2], tr.u)
    assert tr.y[:, 0].tolist() == [0.0] * 6
    assert (tr.p, tr.q, tr.r) == (2, 1, 0)


def test_rlc_initial_slope(rlc_quiet):
    tr = rlc_quiet
    m = 50  # t = 0.05
    assert tr.y[0, m] == pytest.approx(0.4 * tr.t[m], rel=0.02)


def test_rlc_against_ode_solver(rlc_quiet):
    tr = rlc_quiet
    R, L, C = 3.0, 5.0, 5.0

    def rhs(t, s):
        eps, y = s
        return [y, (2 * np.cos(t) - R * y - eps / C) / L]

    t_eval = tr.t[::1000]
    sol = solve_ivp(rhs, (0, tr.t[-1]), [0.0, 0.0], t_eval=t_eval, rtol=1e-10, atol=1e-12)
    err = np.max(np.abs(sol.y[1] - tr.y[0, ::1000]))
    assert err <= 5e-3 * np.max(np.abs(sol.y[1]))


def test_rlc_passive_energy_decay():
    sc = rlc_scenario(inputs=[Waveform(((1.0, 1.0, np.pi / 2),), until=5.0)], T=30.0)
    tr = simulate_network(sc)
    L, C = 5.0, 5.0
    energy = L * tr.y[0] ** 2 + tr.phi0[0, :, 1] ** 2 / C
    after = energy[tr.t >= 5.0 + sc.h]
    assert np.max(np.diff(after)) <= 1e-3
    assert after[-1] < after[0]


def test_pure_integrator():
    sc = PlantScenario(n_sensors=1, b=PolynomialInS((2.5,), monic=False), inputs=(Waveform(drift=(1.0,)),), T=2.0)
    tr = simulate_network(sc)
    np.testing.assert_allclose(tr.y[0], 2.5 * tr.t, atol=1e-6)
    assert tr.phi0.shape[-1] == 1


def test_noise_only_plant_reproduces_wiener_path():
    sc = PlantScenario(n_sensors=2, inputs=(Waveform(), Waveform()), noise="wiener", T=1.0)
    stream = NoiseStream(3, sc.h)
    tr = simulate_network(sc, stream)
    for i in range(2):
        np.testing.assert_array_equal(tr.y[i], stream.path(i, tr.n_steps))
        np.testing.assert_array_equal(tr.v[i], tr.y[i])


def test_first_order_step_response():
    a1, b1 = 2.0, 3.0
    sc = PlantScenario(
        n_sensors=1, a=PolynomialInS((a1,)), b=PolynomialInS((b1,), monic=False),
        inputs=(Waveform(drift=(1.0,)),), T=3.0,
    )
    tr = simulate_network(sc)
    exact = b1 / a1 * (1 - np.exp(-a1 * tr.t))
    assert np.max(np.abs(tr.y[0] - exact)) <= 5 * sc.h * b1


def test_colored_noise_solves_filter_equation():
    d = PolynomialInS((1.5,))
    sc = PlantScenario(n_sensors=1, d=d, inputs=(Waveform(),), noise="wiener", T=5.0)
    stream = NoiseStream(8, sc.h)
    tr = simulate_network(sc, stream)
    w = stream.path(0, tr.n_steps)
    v = tr.v[0]
    left = np.concatenate([[0.0], np.cumsum(v[:-1]) * sc.h])
    assert np.max(np.abs(v + 1.5 * left - w)) <= 1e-2


@pytest.mark.parametrize("noise", ["off", "wiener"])
def test_reconstruction_residual_tape_plant(noise):
    sc = PlantScenario(
        n_sensors=2, a=PolynomialInS((1.0, 0.5)), b=PolynomialInS((1.0, 0.3), monic=False),
        c=PolynomialInS((0.4,)), inputs=(Waveform.sin(1.0, 1.0), Waveform.cos(2.0, 0.5)), noise=noise, T=5.0,
    )
    tr = simulate_network(sc, NoiseStream(1, sc.h))
    assert tr.phi0.shape[-1] == sc.dim == 5
    assert tr.reconstruction_residual() <= 5 * sc.h


def test_reconstruction_residual_state_and_exogenous(rlc_quiet, synth_traj):
    assert rlc_quiet.reconstruction_residual() <= 1e-10
    assert synth_traj.reconstruction_residual() <= 1e-9


def test_noise_off_is_deterministic_across_replications():
    sc = rlc_scenario(T=2.0)
    a = simulate_network(sc, NoiseStream(1, sc.h, 0))
    b = simulate_network(sc, NoiseStream(2, sc.h, 5))
    np.testing.assert_array_equal(a.y, b.y)


def test_synthetic_parameter_and_support():
    sc = synthetic12_scenario()
    np.testing.assert_array_equal(sc.theta, np.arange(1, 11))
    assert [synthetic_support(i) + 1 for i in range(1, 13)] == [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 1, 2]


def test_synthetic_regressor_structure(synth_traj):
    phi = synth_traj.phi0
    nz = np.flatnonzero(np.any(phi[4] != 0, axis=0))
    assert nz.tolist() == [4]
    for i in range(12):
        others = np.delete(phi[i], synthetic_support(i + 1), axis=1)
        assert np.all(others == 0)


def test_synthetic_drift_shapes():
    sc = synthetic12_scenario(noise="off")
    tr = simulate_network(sc)
    t = tr.t
    np.testing.assert_allclose(tr.phi0[2, :, 2], 0.3 * t)  # sensor 3
    np.testing.assert_allclose(tr.phi0[0, :, 0], t)  # sensor 1
    np.testing.assert_allclose(tr.phi0[1, :, 1], t**2)  # sensor 2


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        rlc_scenario(T=1.05)
    with pytest.raises(ScenarioError):
        rlc_scenario(h=3e-3, fusion_interval=0.2005)
    with pytest.raises(ScenarioError):
        rlc_scenario(noise="loud")
    with pytest.raises(ScenarioError):
        PlantScenario(n_sensors=2, inputs=(Waveform(),))
    with pytest.raises(ScenarioError):
        PlantScenario(n_sensors=1, inputs=(Waveform(),), noise="regressor")


def test_waveform_round_trip():
    w = Waveform(((1.0, 2.0, 0.3), (0.5, 1.0, 0.0)), drift=(0.1, 0.2), until=4.0)
    d = w.to_dict()
    assert d["tones"][0] == {"amplitude": 1.0, "frequency": 2.0, "phase": 0.3}
    assert Waveform.from_dict(d) == w
    assert Waveform.from_dict({"tones": [[1.0, 2.0, 0.3]]}).tones == ((1.0, 2.0, 0.3),)
    with pytest.raises(ScenarioError):
        Waveform.from_dict({"tone": []})
    assert w(5.0) == 0.0
