"""Continuous-time regression plants observed by a network of sensors.

Each sensor ``i`` obeys ``a(S) y_i = S b(S) u_i + c(S) v_i`` with
``d(S) v_i = w_i`` for a standard Wiener process ``w_i``. Equivalently
``y_i = S(theta' phi0_i) + v_i`` with::

    theta = [-a_1..-a_p, b_1..b_q, c_1..c_r]
    phi0  = [y, .., S^(p-1) y, u, .., S^(q-1) u, v, .., S^(r-1) v]
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal import NoiseStream, NonFiniteSignalError, PolynomialInS, SignalTape

NOISE_MODES = ("off", "wiener", "regressor")
DYNAMICS = ("tape", "state", "exogenous")


class ScenarioError(ValueError):
    pass


class SimulationAborted(FloatingPointError):
    """The plant state became non-finite."""

    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"non-finite plant state at t={time:.6g}")


@dataclass(frozen=True)
class Waveform:
    """``sum_k A_k sin(w_k t + phase_k) + sum_j drift_j t^j``, switched off after ``until``."""

    tones: tuple[tuple[float, float, float], ...] = ()
    drift: tuple[float, ...] = ()
    until: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(tuple(float(x) for x in tone) for tone in self.tones))
        object.__setattr__(self, "drift", tuple(float(x) for x in self.drift))
        for tone in self.tones:
            if len(tone) != 3:
                raise ScenarioError(f"tone {tone} must be (amplitude, frequency, phase)")

    @classmethod
    def cos(cls, amplitude, frequency):
        return cls(((amplitude, frequency, np.pi / 2),))

    @classmethod
    def sin(cls, amplitude, frequency):
        return cls(((amplitude, frequency, 0.0),))

    def __add__(self, other: "Waveform") -> "Waveform":
        n = max(len(self.drift), len(other.drift))
        drift = [0.0] * n
        for j, c in enumerate(self.drift):
            drift[j] += c
        for j, c in enumerate(other.drift):
            drift[j] += c
        return Waveform(self.tones + other.tones, tuple(drift), self.until)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for amp, freq, phase in self.tones:
            out = out + amp * np.sin(freq * t + phase)
        for j, c in enumerate(self.drift):
            out = out + c * t**j
        if self.until is not None:
            out = np.where(t < self.until, out, 0.0)
        return out

    def to_dict(self):
        return {
            "tones": [{"amplitude": a, "frequency": w, "phase": ph} for a, w, ph in self.tones],
            "drift": list(self.drift),
            "until": self.until,
        }

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"tones", "drift", "until"}
        if unknown:
            raise ScenarioError(f"unknown waveform keys: {sorted(unknown)}")
        tones = []
        for tone in data.get("tones", ()):
            if isinstance(tone, dict):
                extra = set(tone) - {"amplitude", "frequency", "phase"}
                if extra:
                    raise ScenarioError(f"unknown tone keys: {sorted(extra)}")
                tone = (tone["amplitude"], tone["frequency"], tone.get("phase", 0.0))
            tones.append(tuple(tone))
        return cls(tuple(tones), tuple(data.get("drift", ())), data.get("until"))


ZERO = Waveform()


@dataclass(frozen=True)
class ExogenousRegressor:
    """Regressor ``e_support * (drift(t) + xi_scale * xi(t))`` with ``xi`` a Wiener path."""

    support: int
    drift: Waveform
    xi_scale: float = 1.0


@dataclass(frozen=True)
class PlantScenario:
    n_sensors: int
    a: PolynomialInS = field(default_factory=PolynomialInS.one)
    b: PolynomialInS = field(default_factory=lambda: PolynomialInS((1.0,), monic=False))
    c: PolynomialInS = field(default_factory=PolynomialInS.one)
    d: PolynomialInS = field(default_factory=PolynomialInS.one)
    inputs: tuple[Waveform, ...] = ()
    noise: str = "off"
    noise_scale: float = 1.0
    T: float = 10.0
    h: float = 1e-3
    fusion_interval: float = 0.2
    dynamics: str = "tape"
    exogenous: tuple[ExogenousRegressor, ...] = ()
    theta_exogenous: tuple[float, ...] | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.noise not in NOISE_MODES:
            raise ScenarioError(f"noise must be one of {NOISE_MODES}, got {self.noise!r}")
        if self.dynamics not in DYNAMICS:
            raise ScenarioError(f"dynamics must be one of {DYNAMICS}, got {self.dynamics!r}")
        if not self.a.monic or not self.c.monic or not self.d.monic or self.b.monic:
            raise ScenarioError("a, c, d must be monic and b non-monic")
        if self.dynamics == "exogenous":
            if len(self.exogenous) != self.n_sensors or self.theta_exogenous is None:
                raise ScenarioError("exogenous scenarios need one regressor per sensor and theta")
        elif len(self.inputs) != self.n_sensors:
            raise ScenarioError(f"need {self.n_sensors} input waveforms, got {len(self.inputs)}")
        if self.dynamics == "state" and self.c.degree:
            raise ScenarioError("state dynamics require c(S) = 1")
        if self.noise == "regressor" and self.dynamics != "exogenous":
            raise ScenarioError("regressor noise applies to exogenous scenarios only")
        self.grid()

    @property
    def p(self):
        return 0 if self.dynamics == "exogenous" else self.a.degree

    @property
    def q(self):
        return len(self.theta_exogenous) if self.dynamics == "exogenous" else self.b.degree

    @property
    def r(self):
        return 0 if self.dynamics == "exogenous" else self.c.degree

    @property
    def dim(self):
        return self.p + self.q + self.r

    @property
    def theta(self) -> np.ndarray:
        if self.dynamics == "exogenous":
            return np.asarray(self.theta_exogenous, dtype=float)
        return assemble_theta(self.a, self.b, self.c)

    def grid(self) -> tuple[int, int]:
        """Number of steps and steps per fusion window, validating divisibility."""
        if not (self.h > 0 and self.T > 0 and self.fusion_interval > 0):
            raise ScenarioError("T, h and fusion_interval must be positive")
        per = round(self.fusion_interval / self.h)
        if per < 1 or abs(per * self.h - self.fusion_interval) > 1e-9:
            raise ScenarioError("h must divide the fusion interval")
        windows = round(self.T / self.fusion_interval)
        if windows < 1 or abs(windows * self.fusion_interval - self.T) > 1e-9:
            raise ScenarioError("the fusion interval must divide T")
        return windows * per, per


@dataclass
class Trajectories:
    """Sampled network trajectories on the grid ``t_m = m h``, ``m = 0..M``."""

    t: np.ndarray
    y: np.ndarray  # (N, M+1)
    u: np.ndarray
    v: np.ndarray
    phi0: np.ndarray  # (N, M+1, dim)
    theta: np.ndarray
    h: float
    p: int
    q: int
    r: int
    steps_per_fusion: int

    @property
    def n_sensors(self):
        return self.y.shape[0]

    @property
    def n_steps(self):
        return self.y.shape[1] - 1

    @property
    def model_regressors(self) -> np.ndarray:
        """Output and input blocks of the true regressor (what the estimator observes)."""
        return self.phi0[..., : self.p + self.q]

    def reconstruction_residual(self) -> float:
        """``max |y - S(theta' phi0) - v|`` with a left-endpoint running integral."""
        rate = self.phi0 @ self.theta
        integral = np.concatenate(
            [np.zeros((self.n_sensors, 1)), np.cumsum(rate[:, :-1], axis=1) * self.h], axis=1
        )
        return float(np.max(np.abs(self.y - integral - self.v)))


def assemble_theta(a: PolynomialInS, b: PolynomialInS, c: PolynomialInS) -> np.ndarray:
    return np.array([-x for x in a.coeffs] + list(b.coeffs) + list(c.coeffs), dtype=float)


def _noise_paths(scenario, noise, n_steps):
    N = scenario.n_sensors
    if scenario.noise == "off" or noise is None:
        return np.zeros((N, n_steps + 1)), np.zeros((N, n_steps + 1))
    w = np.stack([noise.path(i, n_steps, channel=0) for i in range(N)]) * scenario.noise_scale
    if scenario.noise == "regressor":
        xi = np.stack([noise.path(i, n_steps, channel=1) for i in range(N)])
    else:
        xi = np.zeros_like(w)
    return w, xi


def _filtered_noise(d: PolynomialInS, w: np.ndarray, h: float) -> np.ndarray:
    """Solve ``d(S) v = w`` sample by sample."""
    if d.degree == 0:
        return w.copy()
    N, M1 = w.shape
    tape = SignalTape(h, d.degree, width=N, capacity=M1)
    v = np.empty_like(w)
    for m in range(M1):
        vm = w[:, m].copy()
        for l, coef in enumerate(d.coeffs, start=1):
            vm -= coef * tape.lookahead(l)
        tape.append(vm)
        v[:, m] = vm
    return v


def _check_finite(arr, m, h):
    if not np.all(np.isfinite(arr)):
        raise SimulationAborted(m * h)


def _simulate_tape(sc: PlantScenario, t, w, v):
    N, M1 = w.shape
    h = sc.h
    p, q, r = sc.p, sc.q, sc.r
    u = np.stack([wf(t) for wf in sc.inputs])
    ytape = SignalTape(h, max(p, 1), width=N, capacity=M1)
    utape = SignalTape(h, max(q, 1), width=N, capacity=M1)
    vtape = SignalTape(h, max(r, 1), width=N, capacity=M1)
    y = np.empty((N, M1))
    phi0 = np.empty((N, M1, sc.dim))
    for m in range(M1):
        ym = v[:, m].copy()
        for l, coef in enumerate(sc.a.coeffs, start=1):
            ym -= coef * ytape.lookahead(l)
        for l, coef in enumerate(sc.b.coeffs, start=1):
            ym += coef * utape.lookahead(l)
        for l, coef in enumerate(sc.c.coeffs, start=1):
            ym += coef * vtape.lookahead(l)
        _check_finite(ym, m, h)
        ytape.append(ym)
        utape.append(u[:, m])
        vtape.append(v[:, m])
        y[:, m] = ym
        col = 0
        for tape, order in ((ytape, p), (utape, q), (vtape, r)):
            for j in range(order):
                phi0[:, m, col] = tape.value(j, m)
                col += 1
    return y, u, phi0


def _left_integrals(z, order, h):
    """Rows ``S^0 z .. S^(order-1) z`` by left-endpoint cumulative sums along the last axis."""
    rows = [z]
    for _ in range(1, order):
        prev = rows[-1]
        rows.append(np.concatenate([np.zeros(prev.shape[:-1] + (1,)), np.cumsum(prev[..., :-1], axis=-1) * h], axis=-1))
    return rows


def _simulate_state(sc: PlantScenario, t, w, v):
    """Explicit Euler on the chain ``(y, S y, .., S^(p-1) y)``; integrals of y are exact states."""
    N, M1 = w.shape
    h = sc.h
    p, q = sc.p, sc.q
    theta = sc.theta
    u = np.stack([wf(t) for wf in sc.inputs])
    u_rows = _left_integrals(u, q, h)
    phi0 = np.empty((N, M1, sc.dim))
    for j in range(q):
        phi0[:, :, p + j] = u_rows[j]
    ys = np.zeros((p, N)) if p else np.zeros((1, N))
    y = np.empty((N, M1))
    dv = np.diff(v, axis=1)
    th_y, th_u = theta[:p], theta[p:]
    u_part = phi0[:, :, p:] @ th_u
    ys[0] = v[:, 0]
    for m in range(M1):
        y[:, m] = ys[0]
        if p:
            phi0[:, m, :p] = ys.T
        if m == M1 - 1:
            break
        rate = u_part[:, m]
        if p:
            rate = rate + th_y @ ys
        nxt = np.empty_like(ys)
        nxt[0] = ys[0] + h * rate + dv[:, m]
        if p > 1:
            nxt[1:] = ys[1:] + h * ys[:-1]
        _check_finite(nxt, m + 1, h)
        ys = nxt
    return y, u, phi0


def _simulate_exogenous(sc: PlantScenario, t, w, v, xi):
    N, M1 = w.shape
    h = sc.h
    theta = sc.theta
    phi0 = np.zeros((N, M1, theta.size))
    for i, reg in enumerate(sc.exogenous):
        phi0[i, :, reg.support] = reg.drift(t) + reg.xi_scale * xi[i]
    rate = phi0 @ theta
    y = v + np.concatenate([np.zeros((N, 1)), np.cumsum(rate[:, :-1], axis=1) * h], axis=1)
    _check_finite(y, M1 - 1, h)
    return y, np.zeros((N, M1)), phi0


def simulate_network(scenario: PlantScenario, noise: NoiseStream | None = None) -> Trajectories:
    """Simulate all sensors on the scenario grid.

    ``noise`` supplies the Wiener substreams; it is ignored when the
    scenario's noise mode is ``"off"``.
    """
    n_steps, per = scenario.grid()
    h = scenario.h
    t = np.arange(n_steps + 1) * h
    if noise is not None and abs(noise.h - h) > 1e-15:
        raise ScenarioError("noise stream step differs from scenario step")
    w, xi = _noise_paths(scenario, noise, n_steps)
    # unstable plants overflow on the way to the finiteness check
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            v = _filtered_noise(scenario.d, w, h)
        except NonFiniteSignalError as exc:
            raise SimulationAborted(exc.index * h) from exc
        if scenario.dynamics == "tape":
            try:
                y, u, phi0 = _simulate_tape(scenario, t, w, v)
            except NonFiniteSignalError as exc:
                raise SimulationAborted(exc.index * h) from exc
        elif scenario.dynamics == "state":
            y, u, phi0 = _simulate_state(scenario, t, w, v)
        else:
            y, u, phi0 = _simulate_exogenous(scenario, t, w, v, xi)
    return Trajectories(
        t=t, y=y, u=u, v=v, phi0=phi0, theta=scenario.theta, h=h,
        p=scenario.p, q=scenario.q, r=scenario.r, steps_per_fusion=per,
    )


RLC_INPUTS = (
    Waveform.cos(2.0, 1.0),
    Waveform.sin(1.0, 2.0),
    Waveform.cos(3.0, 2.0),
    Waveform.cos(2.0, 0.5) + Waveform.sin(1.0, 0.5),
    Waveform.sin(1.0, 2.0) + Waveform.cos(3.0, 2.0),
    Waveform.cos(5.0, 0.5),
)


def rlc_scenario(R=3.0, L=5.0, C=5.0, inputs=None, *, T=60.0, h=1e-3, fusion_interval=0.2,
                 noise="off", noise_scale=1.0) -> PlantScenario:
    """Series RLC circuit ``L e'' + R e' + e/C = u`` observed through ``y = e'``.

    ``theta = (-R/L, -1/(LC), 1/L)`` with regressor ``(y, S y, u)``.
    """
    if R < 0 or L <= 0 or C <= 0:
        raise ScenarioError("need R >= 0 and L, C > 0")
    inputs = RLC_INPUTS if inputs is None else tuple(inputs)
    return PlantScenario(
        n_sensors=len(inputs),
        a=PolynomialInS((R / L, 1.0 / (L * C))),
        b=PolynomialInS((1.0 / L,), monic=False),
        inputs=inputs,
        noise=noise,
        noise_scale=noise_scale,
        T=T,
        h=h,
        fusion_interval=fusion_interval,
        dynamics="state",
        name="rlc",
    )


def synthetic_support(sensor: int, dim: int = 10) -> int:
    """Zero-based excited coordinate of 1-based ``sensor``; ``i mod 10 == 0`` maps to the last one."""
    tau = sensor % dim
    return (tau if tau else dim) - 1


def synthetic_drift(sensor: int) -> Waveform:
    return {0: Waveform(drift=(0.0, 0.3)), 1: Waveform(drift=(0.0, 1.0)), 2: Waveform(drift=(0.0, 0.0, 1.0))}[sensor % 3]


def synthetic12_scenario(seed=None, *, n_sensors=12, T=50.0, h=1e-3, fusion_interval=0.2,
                         noise="regressor", noise_scale=1.0) -> PlantScenario:
    """Twelve sensors, ``theta = (1..10)``, each sensor excites a single coordinate.

    ``seed`` is accepted for call-site symmetry; randomness comes from the
    :class:`NoiseStream` passed to :func:`simulate_network`.
    """
    dim = 10
    regs = tuple(
        ExogenousRegressor(synthetic_support(i, dim), synthetic_drift(i), 1.0) for i in range(1, n_sensors + 1)
    )
    return PlantScenario(
        n_sensors=n_sensors,
        inputs=(),
        noise=noise,
        noise_scale=noise_scale,
        T=T,
        h=h,
        fusion_interval=fusion_interval,
        dynamics="exogenous",
        exogenous=regs,
        theta_exogenous=tuple(float(k) for k in range(1, dim + 1)),
        name="synthetic12",
    )
