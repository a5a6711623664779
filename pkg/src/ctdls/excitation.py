"""Excitation diagnostics for networked regressors.

The network condition compares the logarithm of the total regressor energy

    R(n) = sum_j sum_{k<=n} int_{t_k}^{t_{k+1}} |phi_j|^2 ds + lambda_max(P_0^-1)

with the smallest eigenvalue of the pooled information, lagged by the graph
diameter D:

    lambda^n = lambda_min( sum_j sum_{k<=n-D} int phi_j phi_j' ds + sum_j P_{0,j}^-1 )

Convergence is guaranteed when ``log R(n) / lambda^n -> 0``. That is an
asymptotic statement, so the verdicts below are finite-horizon trends only.
All integrals reuse the estimator's left-endpoint grid sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass
class ExcitationSeries:
    epoch_t: np.ndarray  # right end of each epoch window, t_{n+1}
    R: np.ndarray
    lambda_min: np.ndarray
    ratio: np.ndarray  # log R(n) / lambda^n
    single_t: np.ndarray  # fusion instants t_0..t_K
    single_energy: np.ndarray  # (K+1, N) int_0^t |phi_i|^2
    single_lambda: np.ndarray  # (K+1, N) lambda_min(P_{0,i}^-1 + int phi_i phi_i')
    single_ratio: np.ndarray  # (K+1, N) log(e + energy) / lambda

    @property
    def log_ratio(self):
        return self.ratio


def _prior(history, initial_information=None):
    Pi0 = history.initial_information if initial_information is None else np.asarray(initial_information, float)
    if Pi0 is None:
        raise ValueError("history carries no initial information; pass initial_information")
    return Pi0


def accumulate_R(history, initial_information=None) -> np.ndarray:
    """``R(n)`` for every complete epoch ``n = 0..K-1``."""
    Pi0 = _prior(history, initial_information)
    lam_max = float(np.max(np.linalg.eigvalsh(Pi0)[:, -1]))
    return np.cumsum(history.epoch_energy.sum(axis=1)) + lam_max


def continuous_R(history, initial_information=None) -> np.ndarray:
    """``R(t)`` at the history's sample times, including the partial current window."""
    Pi0 = _prior(history, initial_information)
    lam_max = float(np.max(np.linalg.eigvalsh(Pi0)[:, -1]))
    return history.sensor_energy.sum(axis=1) + lam_max


def lambda_min_series(history, diameter: int, initial_information=None) -> np.ndarray:
    """``lambda^n`` for ``n = 0..K-1``; epochs with ``n < diameter`` see only the prior."""
    Pi0 = _prior(history, initial_information)
    pooled = history.gram.sum(axis=1)  # (K, dim, dim)
    K = pooled.shape[0]
    prior = Pi0.sum(axis=0)
    cum = np.cumsum(pooled, axis=0)
    out = np.empty(K)
    for n in range(K):
        last = n - diameter
        total = prior if last < 0 else cum[last] + prior
        out[n] = np.linalg.eigvalsh(total)[0]
    return out


def single_agent_series(history, initial_information=None):
    """Per-sensor energy and information eigenvalue at fusion instants ``t_0..t_K``."""
    Pi0 = _prior(history, initial_information)
    K, N = history.epoch_energy.shape
    energy = np.vstack([np.zeros(N), np.cumsum(history.epoch_energy, axis=0)])
    cum = np.concatenate([np.zeros((1,) + history.gram.shape[1:]), np.cumsum(history.gram, axis=0)])
    lam = np.linalg.eigvalsh(cum + Pi0[None])[..., 0]
    return energy, lam


def excitation_series(history, diameter: int, initial_information=None) -> ExcitationSeries:
    R = accumulate_R(history, initial_information)
    lam = lambda_min_series(history, diameter, initial_information)
    energy, single_lam = single_agent_series(history, initial_information)
    K = R.size
    per_t = history.h * history.steps_per_fusion
    return ExcitationSeries(
        epoch_t=per_t * np.arange(1, K + 1),
        R=R,
        lambda_min=lam,
        ratio=np.log(R) / lam,
        single_t=per_t * np.arange(K + 1),
        single_energy=energy,
        single_lambda=single_lam,
        single_ratio=np.log(np.e + energy) / single_lam,
    )


class Verdict(NamedTuple):
    trend: float
    satisfied_hint: bool


def cec_verdict(ratio, window: int, threshold: float = 1.0) -> Verdict:
    """Least-squares slope of ``log(ratio)`` over the last ``window`` epochs.

    ``satisfied_hint`` is true when the slope is negative and the final ratio
    is below ``threshold``. This is a heuristic on finite data, not a decision
    about the limit.
    """
    ratio = np.asarray(getattr(ratio, "ratio", ratio), dtype=float)
    if window < 2 or ratio.size < 2 * window:
        raise ValueError(f"need at least {2 * window} epochs for a window of {window}")
    tail = ratio[-window:]
    if np.any(tail <= 0) or not np.all(np.isfinite(tail)):
        return Verdict(float("nan"), False)
    slope = float(np.polyfit(np.arange(window, dtype=float), np.log(tail), 1)[0])
    if abs(slope) < 1e-12:
        slope = 0.0
    return Verdict(slope, bool(slope < 0 and tail[-1] < threshold))


def window_information(regressors, h: float, window_steps: int, stride: int = 1, sensors=None) -> np.ndarray:
    """Smallest eigenvalue of ``int_t^{t+T0} sum_i phi_i phi_i' ds`` for windows starting every ``stride`` steps."""
    phi = np.asarray(regressors, dtype=float)
    if sensors is not None:
        phi = phi[list(sensors)]
    N, M, dim = phi.shape
    if window_steps < 1 or window_steps > M:
        raise ValueError("window must cover between one step and the whole record")
    outer = np.einsum("nmi,nmj->mij", phi, phi) * h
    cum = np.concatenate([np.zeros((1, dim, dim)), np.cumsum(outer, axis=0)])
    starts = np.arange(0, M - window_steps + 1, stride)
    gram = cum[starts + window_steps] - cum[starts]
    return np.linalg.eigvalsh(gram)[:, 0]


def pe_window_check(regressors, h: float, T0: float, alpha: float, stride: int = 1, sensors=None) -> np.ndarray:
    """Per-window test of the cooperative persistent-excitation bound ``>= alpha I``.

    ``T0`` is rounded to a whole number of grid steps.
    """
    if not T0 >= h:
        raise ValueError("T0 must be at least one step")
    steps = int(round(T0 / h))
    return window_information(regressors, h, steps, stride, sensors) >= alpha
