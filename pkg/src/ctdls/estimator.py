"""Diffusion least squares for continuous-time regression, plus baselines.

Each sensor runs continuous-time least squares between fusion instants::

    d theta = P phi d(S){dy - phi' theta dt},     d P = -P phi phi' P dt

and at every fusion instant neighbours exchange information matrices
``Pi = P^-1`` and information-weighted estimates::

    Pi_i   <- sum_j a_ij Pi_j
    theta_i <- Pi_i^-1 sum_j a_ij Pi_j theta_j

Time is discretized on a uniform grid with left-endpoint quadrature. The
covariance is propagated with the rank-one matrix inversion lemma so that
``Pi`` grows by exactly ``phi phi' h`` per step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .signal import SignalTape

logger = logging.getLogger(__name__)


class EstimatorDiverged(FloatingPointError):
    """An adaptation or diffusion step produced non-finite values."""

    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"non-finite estimator state at t={time:.6g}")


@dataclass
class DiffusionResult:
    information: np.ndarray
    theta: np.ndarray
    covariance: np.ndarray
    regularized: list[int] = field(default_factory=list)


def diffuse(information, theta, weights, covariance=None) -> DiffusionResult:
    """One diffusion step over all sensors.

    For symmetric weights the exchange is applied edge by edge as equal and
    opposite fluxes ``a_ij (Pi_j - Pi_i)``, so the network total of ``Pi`` is
    conserved up to the rounding of the storage dtype and independently of
    how the self weights were rounded. Sensors without neighbours keep their
    state bitwise, which makes ``W = I`` an exact no-op.
    """
    Pi = np.asarray(information)
    if Pi.dtype not in (np.float64, np.longdouble):
        Pi = Pi.astype(np.float64)
    th = np.asarray(theta, dtype=float)
    W = np.asarray(weights, dtype=float)
    n, dim = th.shape
    rhs = np.einsum("jab,jb->ja", Pi, th.astype(Pi.dtype))
    off = W - np.diag(np.diag(W))
    if np.array_equal(W, W.T):
        new_Pi = Pi.copy()
        new_rhs = rhs.copy()
        for i, j in zip(*np.nonzero(np.triu(off))):
            a = Pi.dtype.type(W[i, j])
            flux = a * (Pi[j] - Pi[i])
            new_Pi[i] += flux
            new_Pi[j] -= flux
            flux_b = a * (rhs[j] - rhs[i])
            new_rhs[i] += flux_b
            new_rhs[j] -= flux_b
    else:
        new_Pi = np.einsum("ij,jab->iab", W.astype(Pi.dtype), Pi)
        new_rhs = W.astype(Pi.dtype) @ rhs
    new_th = th.copy()
    new_P = np.empty((n, dim, dim)) if covariance is None else np.array(covariance, dtype=float)
    mixing = np.any(off != 0, axis=1)
    eye = np.eye(dim)
    regularized = []
    for i in range(n):
        if not mixing[i]:
            new_Pi[i] = Pi[i]
            if covariance is None:
                new_P[i] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(Pi[i].astype(float)), eye)
            continue
        A = new_Pi[i].astype(float)
        try:
            factor = scipy.linalg.cho_factor(A)
        except np.linalg.LinAlgError:
            ridge = 1e-10 * np.trace(A) / dim
            logger.warning("sensor %d: information matrix not positive definite, adding ridge %.3g", i, ridge)
            new_Pi[i] = new_Pi[i] + ridge * eye
            factor = scipy.linalg.cho_factor(new_Pi[i].astype(float))
            regularized.append(i)
        new_th[i] = scipy.linalg.cho_solve(factor, new_rhs[i].astype(float))
        Pinv = scipy.linalg.cho_solve(factor, eye)
        new_P[i] = 0.5 * (Pinv + Pinv.T)
    return DiffusionResult(new_Pi, new_th, new_P, regularized)


def mil_update(P, phi, h):
    """Rank-one covariance update ``P <- (P^-1 + phi phi' h)^-1`` for a stack of sensors.

    Returns the new covariance and the gain ``P_new phi``.
    """
    Pphi = np.matmul(P, phi[..., None])[..., 0]
    denom = 1.0 + h * np.einsum("ni,ni->n", phi, Pphi)
    gain = Pphi / denom[:, None]
    P_new = P - h * gain[:, :, None] * Pphi[:, None, :]
    return P_new, gain


def lyapunov(information, theta, theta_true) -> float:
    """``sum_i (theta - theta_i)' Pi_i (theta - theta_i)``."""
    err = (np.asarray(theta_true)[None, :] - theta).astype(np.asarray(information).dtype)
    return float(np.einsum("ni,nij,nj->", err, information, err))


@dataclass
class EstimateHistory:
    """Sampled estimates and per-fusion audit records from one run."""

    t: np.ndarray  # (S,)
    theta: np.ndarray  # (S, N, dim)
    sample_index: np.ndarray  # grid index of each sample
    sensor_energy: np.ndarray | None = None  # (S, N) running integral of |phi|^2
    lyapunov: np.ndarray | None = None  # (S,) network theta-error weighted by Pi
    fusion_t: np.ndarray | None = None  # (K,)
    gram: np.ndarray | None = None  # (K, N, dim, dim) per-window integral of phi phi'
    epoch_energy: np.ndarray | None = None  # (K, N)
    v_minus: np.ndarray | None = None
    v_plus: np.ndarray | None = None
    logdet_minus: np.ndarray | None = None
    logdet_plus: np.ndarray | None = None
    conservation: np.ndarray | None = None
    inverse_residual: np.ndarray | None = None
    info_residual: np.ndarray | None = None
    lambda_min: np.ndarray | None = None  # (K, N)
    step_lyapunov_increase: float | None = None
    initial_information: np.ndarray | None = None  # (N, dim, dim)
    regressors: np.ndarray | None = None  # (N, M, dim) regressor used at each step
    h: float = 0.0
    steps_per_fusion: int = 0
    events: list = field(default_factory=list)

    @property
    def n_sensors(self):
        return self.theta.shape[1]

    def squared_error(self, theta_true) -> np.ndarray:
        """``|theta_i(t) - theta|^2`` per sample and sensor."""
        return np.sum((self.theta - np.asarray(theta_true)[None, None, :]) ** 2, axis=-1)

    def max_lyapunov_violation(self) -> float:
        if self.v_plus is None or not len(self.v_plus):
            return 0.0
        return float(max(0.0, np.max(self.v_plus - self.v_minus)))

    def max_det_violation(self) -> float:
        """Largest ``log det`` drop across a fusion (a relative determinant violation)."""
        if self.logdet_plus is None or not len(self.logdet_plus):
            return 0.0
        return float(max(0.0, np.max(self.logdet_minus - self.logdet_plus)))

    def max_conservation_residual(self) -> float:
        if self.conservation is None or not len(self.conservation):
            return 0.0
        return float(np.max(self.conservation))


def _as_sensor_stack(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if y.ndim == 1:
        y = y[None]
    if X.ndim != 3 or y.ndim != 2 or X.shape[:2] != y.shape:
        raise ValueError(f"expected X of shape (N, M+1, k) and y of shape (N, M+1), got {X.shape} and {y.shape}")
    if X.shape[1] < 2:
        raise ValueError("need at least two samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")
    return X, y


class _RegressorBase(BaseEstimator):
    def predict(self, X):
        """Predicted output rate ``phi' theta_i`` for each sensor's regressors ``X[i]``."""
        check_is_fitted(self, "theta_")
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.theta_.shape[0] or X.shape[-1] != self.theta_.shape[1]:
            raise ValueError(f"X must have shape (N, ..., {self.theta_.shape[1]})")
        return np.einsum("n...k,nk->n...", X, self.theta_)

    def _initial_theta(self, n, dim):
        if self.theta0 is None:
            return np.zeros((n, dim))
        th0 = np.asarray(self.theta0, dtype=float)
        if th0.shape == (dim,):
            return np.tile(th0, (n, 1))
        if th0.shape == (n, dim):
            return th0.copy()
        raise ValueError(f"theta0 must have shape ({dim},) or ({n}, {dim})")

    def _weights(self, n):
        if self.weights is None:
            return np.eye(n)
        W = np.asarray(self.weights, dtype=float)
        if W.shape != (n, n):
            raise ValueError(f"weights must be {n}x{n}")
        return W


class DistributedLS(_RegressorBase):
    """Diffusion least squares over a sensor network.

    Parameters
    ----------
    weights : array (N, N) or None
        Symmetric doubly stochastic fusion weights; ``None`` means no
        exchange (every sensor runs standard least squares).
    dt : float
        Sampling step of the data.
    fusion_interval : float
        Time between diffusion steps; must be a multiple of ``dt``.
    alpha : float
        Initial covariance ``P(0) = alpha I``.
    theta0 : array or None
        Initial estimate, shared ``(dim,)`` or per sensor ``(N, dim)``.
    noise_order : int
        Number of noise coefficients ``r``; the estimator builds the
        matching residual block of the regressor itself.
    noise_filter : sequence of float
        Coefficients ``d_1..d_r`` of the known noise filter ``d(S)``.
    covariance_update : {"mil", "euler"}
        Rank-one inversion-lemma update (default) or explicit Euler on ``dP``.
    record_stride : int or None
        Grid steps between stored samples; default is one per 0.1 time units.
    audit_steps : bool
        Track the error-weighted information along every adaptation step.
    """

    def __init__(self, weights=None, dt=1e-3, fusion_interval=0.2, alpha=3.0, theta0=None,
                 noise_order=0, noise_filter=(), covariance_update="mil", record_stride=None,
                 audit_steps=False):
        self.weights = weights
        self.dt = dt
        self.fusion_interval = fusion_interval
        self.alpha = alpha
        self.theta0 = theta0
        self.noise_order = noise_order
        self.noise_filter = noise_filter
        self.covariance_update = covariance_update
        self.record_stride = record_stride
        self.audit_steps = audit_steps

    def _steps_per_fusion(self):
        per = round(self.fusion_interval / self.dt)
        if per < 1 or abs(per * self.dt - self.fusion_interval) > 1e-9:
            raise ValueError("fusion_interval must be a positive multiple of dt")
        return per

    def fit(self, X, y, theta_true=None):
        """Run the estimator over sampled data.

        ``X[i, m]`` holds the output/input part of sensor ``i``'s regressor at
        ``t_m`` and ``y[i, m]`` its output. With ``theta_true`` the fusion
        audits (error-weighted information before and after each diffusion)
        are recorded as well.
        """
        X, y = _as_sensor_stack(X, y)
        if self.covariance_update not in ("mil", "euler"):
            raise ValueError("covariance_update must be 'mil' or 'euler'")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        h = float(self.dt)
        per = self._steps_per_fusion()
        N, M1, k = X.shape
        M = M1 - 1
        r = int(self.noise_order)
        dim = k + r
        d_coeffs = tuple(float(c) for c in self.noise_filter)
        W = self._weights(N)
        stride = self.record_stride or max(1, round(0.1 / h))
        true = None if theta_true is None else np.asarray(theta_true, dtype=float)
        if true is not None and true.shape != (dim,):
            raise ValueError(f"theta_true must have shape ({dim},)")

        theta = self._initial_theta(N, dim)
        P = np.tile(self.alpha * np.eye(dim), (N, 1, 1))
        # extended precision keeps the network information total exact to well below 1e-9
        Pi = np.tile(np.eye(dim, dtype=np.longdouble) / self.alpha, (N, 1, 1))
        Pi0 = Pi.astype(float)
        dY = np.diff(y, axis=1)

        if r:
            v_tape = SignalTape(h, max(r - 1, 1), width=N, capacity=M1)
            g_tape = SignalTape(h, 1, width=N, capacity=M1)
            regressors = np.empty((N, M, dim))
        else:
            regressors = X[:, :M]
        z_tape = SignalTape(h, max(len(d_coeffs) - 1, 1), width=N, capacity=M1) if any(d_coeffs) else None
        z = np.zeros(N)

        n_fusions = M // per
        rec = _Recorder(M, stride, N, dim, n_fusions, true is not None)
        rec.sample(0, theta, Pi, true)
        window_start = Pi.copy()
        step_increase = 0.0 if (self.audit_steps and true is not None) else None
        events = []

        for m in range(M):
            if r:
                vhat = y[:, m] - g_tape.lookahead(1)
                v_tape.append(vhat)
                phi = np.concatenate([X[:, m], np.stack([v_tape.value(j, m) for j in range(r)], axis=1)], axis=1)
                regressors[:, m] = phi
                g_tape.append(np.einsum("ni,ni->n", phi, theta))
            else:
                phi = X[:, m]
            e = dY[:, m] - h * np.einsum("ni,ni->n", phi, theta)
            if z_tape is not None:
                z_tape.append(z)
                filt = e.copy()
                for l, coef in enumerate(d_coeffs, start=1):
                    filt += h * coef * z_tape.value(l - 1, m)
                z = z + e
            else:
                filt = e
            if step_increase is not None:
                before = np.einsum("ni,nij,nj->n", true - theta, Pi, true - theta)
            if self.covariance_update == "mil":
                P, gain = mil_update(P, phi, h)
            else:
                Pphi = np.matmul(P, phi[..., None])[..., 0]
                P = P - h * Pphi[:, :, None] * Pphi[:, None, :]
                gain = np.matmul(P, phi[..., None])[..., 0]
            Pi += h * (phi[:, :, None] * phi[:, None, :])
            theta = theta + gain * filt[:, None]
            if step_increase is not None:
                after = np.einsum("ni,nij,nj->n", true - theta, Pi, true - theta)
                step_increase = max(step_increase, float(np.max(after - before)))

            if (m + 1) % per == 0:
                if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(P)) and np.all(np.isfinite(Pi))):
                    raise EstimatorDiverged((m + 1) * h)
                kidx = (m + 1) // per - 1
                rec.window_delta(kidx, Pi - window_start)
                res = diffuse(Pi, theta, W, covariance=P)
                rec.fusion(kidx, (m + 1) * h, Pi, theta, res, true)
                if res.regularized:
                    events.append({"t": (m + 1) * h, "event": "ridge", "sensors": res.regularized})
                Pi, theta, P = res.information, res.theta, res.covariance
                window_start = Pi.copy()
            if (m + 1) % stride == 0 or m + 1 == M:
                rec.sample(m + 1, theta, Pi, true)

        if not np.all(np.isfinite(theta)):
            raise EstimatorDiverged(M * h)

        hist = rec.finish(h, per, regressors, Pi0, W)
        hist.step_lyapunov_increase = step_increase
        hist.events = events
        self.theta_ = theta
        self.covariance_ = P
        self.information_ = Pi.astype(float)
        self.history_ = hist
        self.n_features_in_ = dim
        return self


class StandardLS(DistributedLS):
    """Continuous-time least squares run independently at every sensor."""

    def __init__(self, dt=1e-3, fusion_interval=0.2, alpha=3.0, theta0=None, noise_order=0,
                 noise_filter=(), covariance_update="mil", record_stride=None, audit_steps=False):
        super().__init__(None, dt, fusion_interval, alpha, theta0, noise_order, noise_filter,
                         covariance_update, record_stride, audit_steps)


class CooperativeGradient(_RegressorBase):
    """Consensus-type gradient estimator

    ``d theta_i = gamma phi_i (dy_i - phi_i' theta_i dt) + beta sum_j a_ij (theta_j - theta_i) dt``,

    integrated with explicit Euler.
    """

    def __init__(self, weights=None, dt=1e-3, gamma=1.0, beta=1.0, theta0=None, record_stride=None):
        self.weights = weights
        self.dt = dt
        self.gamma = gamma
        self.beta = beta
        self.theta0 = theta0
        self.record_stride = record_stride

    def fit(self, X, y, theta_true=None):
        X, y = _as_sensor_stack(X, y)
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gains must be non-negative")
        h = float(self.dt)
        N, M1, dim = X.shape
        M = M1 - 1
        W = self._weights(N)
        stride = self.record_stride or max(1, round(0.1 / h))
        theta = self._initial_theta(N, dim)
        dY = np.diff(y, axis=1)
        idx = [0]
        samples = [theta.copy()]
        for m in range(M):
            phi = X[:, m]
            e = dY[:, m] - h * np.einsum("ni,ni->n", phi, theta)
            theta = theta + self.gamma * phi * e[:, None] + h * self.beta * (W @ theta - theta)
            if (m + 1) % stride == 0 or m + 1 == M:
                if not np.all(np.isfinite(theta)):
                    raise EstimatorDiverged((m + 1) * h)
                idx.append(m + 1)
                samples.append(theta.copy())
        idx = np.asarray(idx)
        energy = np.concatenate([np.zeros((N, 1)), np.cumsum(np.sum(X[:, :M] ** 2, axis=-1), axis=1) * h], axis=1)
        self.theta_ = theta
        self.history_ = EstimateHistory(
            t=idx * h, theta=np.stack(samples), sample_index=idx,
            sensor_energy=energy[:, idx].T, h=h,
        )
        self.n_features_in_ = dim
        return self


class _Recorder:
    """Collects sampled estimates and per-fusion audits during a run."""

    def __init__(self, n_steps, stride, N, dim, n_fusions, with_truth):
        self.idx, self.thetas, self.lyap = [], [], []
        self.with_truth = with_truth
        K = n_fusions
        self.fusion_t = np.zeros(K)
        self.delta = np.zeros((K, N, dim, dim), dtype=np.longdouble)
        self.v_minus = np.zeros(K)
        self.v_plus = np.zeros(K)
        self.ld_minus = np.zeros(K)
        self.ld_plus = np.zeros(K)
        self.conservation = np.zeros(K)
        self.inverse = np.zeros(K)
        self.lam = np.zeros((K, N))

    def sample(self, m, theta, Pi, true):
        self.idx.append(m)
        self.thetas.append(theta.copy())
        if true is not None:
            self.lyap.append(lyapunov(Pi, theta, true))

    def window_delta(self, k, delta):
        self.delta[k] = delta

    def fusion(self, k, t, Pi, theta, res, true):
        self.fusion_t[k] = t
        if true is not None:
            self.v_minus[k] = lyapunov(Pi, theta, true)
            self.v_plus[k] = lyapunov(res.information, res.theta, true)
        before, after = Pi.astype(float), res.information.astype(float)
        self.ld_minus[k] = float(np.sum(np.linalg.slogdet(before)[1]))
        self.ld_plus[k] = float(np.sum(np.linalg.slogdet(after)[1]))
        drift = res.information.sum(axis=0) - Pi.sum(axis=0)
        self.conservation[k] = float(np.sqrt(np.sum(drift * drift)))
        eye = np.eye(Pi.shape[-1])
        self.inverse[k] = float(np.max(np.linalg.norm(after @ res.covariance - eye, axis=(1, 2))))
        self.lam[k] = np.linalg.eigvalsh(after)[:, 0]

    def finish(self, h, per, regressors, Pi0, W):
        N, M, dim = regressors.shape
        K = self.fusion_t.size
        idx = np.asarray(self.idx)
        sq = np.einsum("nmi,nmi->nm", regressors, regressors) * h
        energy = np.concatenate([np.zeros((N, 1)), np.cumsum(sq, axis=1)], axis=1)
        gram = np.empty((K, N, dim, dim), dtype=np.longdouble)
        for k in range(K):
            chunk = regressors[:, k * per:(k + 1) * per].astype(np.longdouble)
            gram[k] = np.einsum("nmi,nmj->nij", chunk, chunk) * h
        epoch_energy = sq[:, : K * per].reshape(N, K, per).sum(axis=2).T
        gap = self.delta - gram
        info_residual = np.sqrt(np.sum(gap * gap, axis=(2, 3))).max(axis=1).astype(float) if K else np.zeros(0)
        gram = gram.astype(float)
        return EstimateHistory(
            t=idx * h,
            theta=np.stack(self.thetas),
            sample_index=idx,
            sensor_energy=energy[:, idx].T,
            lyapunov=np.asarray(self.lyap) if self.with_truth else None,
            fusion_t=self.fusion_t,
            gram=gram,
            epoch_energy=epoch_energy,
            v_minus=self.v_minus if self.with_truth else None,
            v_plus=self.v_plus if self.with_truth else None,
            logdet_minus=self.ld_minus,
            logdet_plus=self.ld_plus,
            conservation=self.conservation,
            inverse_residual=self.inverse,
            info_residual=info_residual,
            lambda_min=self.lam,
            initial_information=Pi0,
            regressors=regressors,
            h=h,
            steps_per_fusion=per,
        )


def _estimator_kwargs(traj, alpha, theta0, record_stride, audit_steps, noise_filter):
    return dict(dt=traj.h, fusion_interval=traj.steps_per_fusion * traj.h, alpha=alpha, theta0=theta0,
                noise_order=traj.r, noise_filter=tuple(noise_filter), record_stride=record_stride,
                audit_steps=audit_steps)


def run_dls(traj, weights, *, alpha=3.0, theta0=None, noise_filter=(), record_stride=None,
            audit_steps=False) -> EstimateHistory:
    """Diffusion least squares on simulated trajectories, audited against the true parameter."""
    est = DistributedLS(weights, **_estimator_kwargs(traj, alpha, theta0, record_stride, audit_steps, noise_filter))
    return est.fit(traj.model_regressors, traj.y, theta_true=traj.theta).history_


def run_standard_ls(traj, *, alpha=3.0, theta0=None, noise_filter=(), record_stride=None,
                    audit_steps=False) -> EstimateHistory:
    est = StandardLS(**_estimator_kwargs(traj, alpha, theta0, record_stride, audit_steps, noise_filter))
    return est.fit(traj.model_regressors, traj.y, theta_true=traj.theta).history_


def run_coop_gradient(traj, weights, *, gamma=1.0, beta=1.0, theta0=None, record_stride=None) -> EstimateHistory:
    if traj.r:
        raise ValueError("the cooperative gradient baseline supports r = 0 only")
    est = CooperativeGradient(weights, dt=traj.h, gamma=gamma, beta=beta, theta0=theta0, record_stride=record_stride)
    return est.fit(traj.model_regressors, traj.y, theta_true=traj.theta).history_
