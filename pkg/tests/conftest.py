import numpy as np
import pytest

from ctdls import estimator, network, plant
from ctdls.signal import NoiseStream


@pytest.fixture(scope="session")
def ring6():
    top = network.ring_topology(6)
    return top, network.metropolis_weights(top)


@pytest.fixture(scope="session")
def ring12():
    top = network.ring_topology(12, chords=[(1, 7), (4, 10)])
    return top, network.metropolis_weights(top)


@pytest.fixture(scope="session")
def rlc_quiet():
    return plant.simulate_network(plant.rlc_scenario())


@pytest.fixture(scope="session")
def rlc_quiet_dls(rlc_quiet, ring6):
    return estimator.run_dls(rlc_quiet, ring6[1], audit_steps=True)


@pytest.fixture(scope="session")
def rlc_quiet_std(rlc_quiet):
    return estimator.run_standard_ls(rlc_quiet)


@pytest.fixture(scope="session")
def synth_traj():
    sc = plant.synthetic12_scenario()
    return plant.simulate_network(sc, NoiseStream(11, sc.h, 0))


@pytest.fixture(scope="session")
def synth_dls(synth_traj, ring12):
    return estimator.run_dls(synth_traj, ring12[1])


@pytest.fixture(scope="session")
def synth_std(synth_traj):
    return estimator.run_standard_ls(synth_traj)


def scalar_data(T=1.0, h=1e-3, theta=2.0):
    """One sensor, phi = 1, noise-free output y = theta t."""
    M = int(round(T / h))
    t = np.arange(M + 1) * h
    return np.ones((1, M + 1, 1)), theta * t[None, :]


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(key, ok, detail):
        _VERDICTS[key] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: (int(k.rstrip("ab")), k)):
        ok, detail = _VERDICTS[key]
        terminalreporter.write_line(f"criterion {key:>3s}: {'PASS' if ok else 'FAIL'}  {detail}")
