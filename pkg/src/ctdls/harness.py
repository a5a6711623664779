"""Scenario configuration, Monte Carlo runs, the normal-equation oracle and report export."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import excitation as exc
from .estimator import EstimatorDiverged, run_coop_gradient, run_dls, run_standard_ls
from .network import build_topology, check_weight_matrix, metropolis_weights, ring_topology
from .plant import (
    PlantScenario,
    SimulationAborted,
    Waveform,
    rlc_scenario,
    simulate_network,
    synthetic12_scenario,
)
from .signal import NoiseStream, PolynomialInS

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ESTIMATORS = ("dls", "standard_ls", "coop_gradient")
SCENARIOS = ("rlc", "synthetic12", "custom")
SYNTHETIC_CHORDS = ((1, 7), (4, 10))

MSE_COLUMNS = ("estimator", "replication_or_mean", "sensor", "t", "mse", "theta_err_norm")
EXCITATION_COLUMNS = ("epoch", "t", "R", "lambda_min", "log_ratio", "pe_window_pass")
AUDIT_COLUMNS = ("replication", "max_lyapunov_violation", "max_det_violation", "conservation_residual")

# tolerances used by the audit subcommand
AUDIT_TOLERANCES = {
    "max_lyapunov_violation": 1e-9,
    "max_det_violation": 1e-9,
    "conservation_residual": 1e-9,
    "info_residual": 1e-9,
    "inverse_residual": 1e-6,
}


class ConfigError(ValueError):
    """Invalid scenario configuration."""


class OracleSingular(np.linalg.LinAlgError):
    pass


@dataclass
class ScenarioConfig:
    name: str = "rlc"
    nodes: int | None = None
    edges: list | None = None
    weight_rule: str = "metropolis"
    weights: list | None = None
    T: float | None = None
    h: float = 1e-3
    fusion_interval: float = 0.2
    replications: int = 1
    seed: int = 0
    estimators: list = field(default_factory=lambda: ["dls", "standard_ls"])
    gamma: float = 1.0
    beta: float = 1.0
    theta0: list | None = None
    alpha: float = 3.0
    noise: str | None = None
    noise_scale: float = 1.0
    plant: dict | None = None
    out: str = "out"
    csv_stride: float = 0.1
    full_resolution: bool = False
    excitation: bool = True
    cec_window: int | None = None
    pe_T0: float | None = None
    pe_alpha: float | None = None
    oracle: bool = False
    audit_steps: bool = False

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as err:
            raise ConfigError(f"cannot read {path}: {err}") from err
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from err
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        if self.name not in SCENARIOS:
            raise ConfigError(f"name must be one of {SCENARIOS}")
        if self.weight_rule not in ("metropolis", "explicit"):
            raise ConfigError("weight_rule must be 'metropolis' or 'explicit'")
        if self.weight_rule == "explicit" and self.weights is None:
            raise ConfigError("explicit weight rule needs a weights matrix")
        if not (isinstance(self.h, (int, float)) and self.h > 0):
            raise ConfigError("h must be positive")
        if not self.fusion_interval > 0:
            raise ConfigError("fusion_interval must be positive")
        per = round(self.fusion_interval / self.h)
        if per < 1 or abs(per * self.h - self.fusion_interval) > 1e-9:
            raise ConfigError("fusion_interval / h must be an integer")
        if self.T is not None and not self.T > 0:
            raise ConfigError("T must be positive")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ConfigError("replications must be an integer >= 1")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or len(set(self.estimators)) != len(self.estimators):
            raise ConfigError(f"estimators must be distinct entries of {ESTIMATORS}")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.gamma < 0 or self.beta < 0:
            raise ConfigError("gamma and beta must be non-negative")
        if not self.csv_stride > 0:
            raise ConfigError("csv_stride must be positive")
        if (self.pe_T0 is None) != (self.pe_alpha is None):
            raise ConfigError("pe_T0 and pe_alpha go together")
        if self.name == "custom" and not self.plant:
            raise ConfigError("custom scenarios need a plant block")

    # building blocks

    @property
    def horizon(self) -> float:
        if self.T is not None:
            return float(self.T)
        return 50.0 if self.name == "synthetic12" else 60.0

    def scenario(self) -> PlantScenario:
        plant = dict(self.plant or {})
        common = dict(T=self.horizon, h=self.h, fusion_interval=self.fusion_interval)
        try:
            if self.name == "rlc":
                _only(plant, {"R", "L", "C", "inputs"})
                inputs = plant.get("inputs")
                inputs = None if inputs is None else [Waveform.from_dict(w) for w in inputs]
                return rlc_scenario(plant.get("R", 3.0), plant.get("L", 5.0), plant.get("C", 5.0), inputs,
                                    noise=self.noise or "off", noise_scale=self.noise_scale, **common)
            if self.name == "synthetic12":
                _only(plant, set())
                return synthetic12_scenario(n_sensors=self.nodes or 12, noise=self.noise or "regressor",
                                            noise_scale=self.noise_scale, **common)
            _only(plant, {"a", "b", "c", "d", "inputs"})
            inputs = tuple(Waveform.from_dict(w) for w in plant.get("inputs", ()))
            return PlantScenario(
                n_sensors=len(inputs),
                a=PolynomialInS(plant.get("a", ())),
                b=PolynomialInS(plant.get("b", (1.0,)), monic=False),
                c=PolynomialInS(plant.get("c", ())),
                d=PolynomialInS(plant.get("d", ())),
                inputs=inputs,
                noise=self.noise or "off",
                noise_scale=self.noise_scale,
                dynamics="tape",
                name="custom",
                **common,
            )
        except (ValueError, KeyError, TypeError) as err:
            raise ConfigError(f"invalid plant: {err}") from err

    def topology(self, n_sensors: int):
        nodes = n_sensors if self.nodes is None else int(self.nodes)
        if nodes != n_sensors:
            raise ConfigError(f"nodes={nodes} but the scenario has {n_sensors} sensors")
        try:
            if self.edges is not None:
                return build_topology(nodes, [tuple(e) for e in self.edges])
            chords = SYNTHETIC_CHORDS if self.name == "synthetic12" and nodes == 12 else ()
            return ring_topology(nodes, chords)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def weight_matrix(self, topology) -> np.ndarray:
        if self.weight_rule == "metropolis":
            return metropolis_weights(topology)
        try:
            return check_weight_matrix(self.weights, topology)
        except ValueError as err:
            raise ConfigError(f"weights: {err}") from err


def _only(block, allowed):
    extra = set(block) - set(allowed)
    if extra:
        raise ConfigError(f"unknown plant keys: {sorted(extra)}")


@dataclass
class RunReport:
    config: dict
    estimators: list
    n_sensors: int
    theta_true: np.ndarray
    t: np.ndarray
    mse: dict  # estimator -> (N, S)
    theta_err_norm: dict  # estimator -> (N, S)
    final_theta: dict  # estimator -> (N, dim)
    completed: dict  # estimator -> replications that finished
    audits: list  # one dict per replication (dls only)
    audit_summary: dict
    excitation: dict | None
    oracle: dict | None
    aborted: list
    steps: int
    wall_clock: float
    schema_version: int = SCHEMA_VERSION

    @property
    def partial(self) -> bool:
        return bool(self.aborted)

    def audit_failures(self, tolerances=None) -> dict:
        tol = AUDIT_TOLERANCES if tolerances is None else tolerances
        return {k: v for k, v in self.audit_summary.items() if k in tol and v > tol[k]}

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "estimators": list(self.estimators),
            "n_sensors": self.n_sensors,
            "theta_true": self.theta_true.tolist(),
            "t": self.t.tolist(),
            "mse": {k: v.tolist() for k, v in self.mse.items()},
            "theta_err_norm": {k: v.tolist() for k, v in self.theta_err_norm.items()},
            "final_theta": {k: v.tolist() for k, v in self.final_theta.items()},
            "completed": dict(self.completed),
            "audits": self.audits,
            "audit_summary": self.audit_summary,
            "excitation": None if self.excitation is None else _listify(self.excitation),
            "oracle": self.oracle,
            "aborted": self.aborted,
            "steps": self.steps,
            "wall_clock": self.wall_clock,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')!r}")
        arr = lambda d: {k: np.asarray(v, dtype=float) for k, v in d.items()}  # noqa: E731
        ex = data["excitation"]
        if ex is not None:
            ex = {k: (np.asarray(v, dtype=float) if k in _EXCITATION_ARRAYS else v) for k, v in ex.items()}
        return cls(
            config=data["config"],
            estimators=list(data["estimators"]),
            n_sensors=int(data["n_sensors"]),
            theta_true=np.asarray(data["theta_true"], dtype=float),
            t=np.asarray(data["t"], dtype=float),
            mse=arr(data["mse"]),
            theta_err_norm=arr(data["theta_err_norm"]),
            final_theta=arr(data["final_theta"]),
            completed=dict(data["completed"]),
            audits=list(data["audits"]),
            audit_summary=dict(data["audit_summary"]),
            excitation=ex,
            oracle=data["oracle"],
            aborted=list(data["aborted"]),
            steps=int(data["steps"]),
            wall_clock=float(data["wall_clock"]),
            schema_version=int(data["schema_version"]),
        )


_EXCITATION_ARRAYS = ("epoch_t", "R", "lambda_min", "log_ratio", "R_continuous", "single_ratio")


def _listify(d):
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}


def normal_equation_oracle(regressors, y, weights, n, *, h, steps_per_fusion, alpha=3.0, theta0=None,
                           quadrature="left", prior=True) -> np.ndarray:
    """Minimizer of the network-weighted accumulated prediction error at fusion instant ``t_n``.

    Sensor ``i`` weights the data of sensor ``j`` in window ``k`` by
    ``(W^(n-k))_ij`` and the prior ``Pi_0 = I / alpha`` by ``(W^n)_ij``.
    ``regressors`` has shape ``(N, M+1, dim)``; the trapezoid variant needs
    the sample at ``t_n`` as well. Valid for ``d(S) = 1``.
    """
    if quadrature not in ("left", "trapezoid"):
        raise ValueError("quadrature must be 'left' or 'trapezoid'")
    phi = np.asarray(regressors, dtype=float)
    y = np.asarray(y, dtype=float)
    W = np.asarray(weights, dtype=float)
    N, _, dim = phi.shape
    per = int(steps_per_fusion)
    stop = n * per
    if stop >= y.shape[1]:
        raise ValueError(f"epoch {n} lies beyond the data")
    dy = np.diff(y[:, : stop + 1], axis=1)
    left = phi[:, :stop]
    if quadrature == "left":
        outer = np.einsum("nmi,nmj->nmij", left, left) * h
        cross = left * dy[..., None]
    else:
        right = phi[:, 1 : stop + 1]
        outer = 0.5 * h * (np.einsum("nmi,nmj->nmij", left, left) + np.einsum("nmi,nmj->nmij", right, right))
        cross = 0.5 * (left + right) * dy[..., None]
    G = outer.reshape(N, n, per, dim, dim).sum(axis=2)  # (N, n, dim, dim)
    g = cross.reshape(N, n, per, dim).sum(axis=2)

    powers = [np.eye(N)]
    for _ in range(n):
        powers.append(powers[-1] @ W)
    A = np.zeros((N, dim, dim))
    b = np.zeros((N, dim))
    for k in range(n):
        Wk = powers[n - k]
        A += np.einsum("ij,jab->iab", Wk, G[:, k])
        b += Wk @ g[:, k]
    if prior:
        th0 = np.zeros((N, dim)) if theta0 is None else np.broadcast_to(np.asarray(theta0, dtype=float), (N, dim))
        A += np.einsum("ij,ab->iab", powers[n], np.eye(dim) / alpha)
        b += powers[n] @ (th0 / alpha)
    out = np.empty((N, dim))
    for i in range(N):
        if np.linalg.matrix_rank(A[i]) < dim:
            raise OracleSingular(f"normal equations of sensor {i + 1} are singular at epoch {n}")
        out[i] = np.linalg.solve(A[i], b[i])
    return out


def _record_stride(config, h):
    return 1 if config.full_resolution else max(1, round(config.csv_stride / h))


def _run_estimator(name, traj, W, config, stride, noise_filter):
    if name == "dls":
        return run_dls(traj, W, alpha=config.alpha, theta0=config.theta0, noise_filter=noise_filter,
                       record_stride=stride, audit_steps=config.audit_steps)
    if name == "standard_ls":
        return run_standard_ls(traj, alpha=config.alpha, theta0=config.theta0, noise_filter=noise_filter,
                               record_stride=stride, audit_steps=config.audit_steps)
    return run_coop_gradient(traj, W, gamma=config.gamma, beta=config.beta, theta0=config.theta0,
                             record_stride=stride)


def _audit_record(rep, hist):
    return {
        "replication": rep,
        "max_lyapunov_violation": hist.max_lyapunov_violation(),
        "max_det_violation": hist.max_det_violation(),
        "conservation_residual": hist.max_conservation_residual(),
        "info_residual": float(np.max(hist.info_residual)) if hist.info_residual.size else 0.0,
        "inverse_residual": float(np.max(hist.inverse_residual)) if hist.inverse_residual.size else 0.0,
        "ridge_events": len(hist.events),
    }


def summarize_audits(audits) -> dict:
    keys = ("max_lyapunov_violation", "max_det_violation", "conservation_residual", "info_residual",
            "inverse_residual")
    return {k: (max(a[k] for a in audits) if audits else 0.0) for k in keys}


def excitation_report(history, diameter, config, t_samples=None) -> dict:
    """Excitation series of one run in report form."""
    series = exc.excitation_series(history, diameter)
    K = series.R.size
    window = config.cec_window or max(2, K // 2)
    try:
        verdict = exc.cec_verdict(series.ratio, window)
        verdict = {"trend": verdict.trend, "satisfied_hint": verdict.satisfied_hint, "window": window}
    except ValueError as err:
        verdict = {"trend": None, "satisfied_hint": False, "window": window, "note": str(err)}
    passes = [None] * K
    if config.pe_T0 is not None and history.regressors is not None:
        ok = exc.pe_window_check(history.regressors, history.h, config.pe_T0, config.pe_alpha,
                                 stride=history.steps_per_fusion)
        for n, flag in enumerate(ok[:K]):
            passes[n] = bool(flag)
    out = {
        "epoch_t": series.epoch_t,
        "R": series.R,
        "lambda_min": series.lambda_min,
        "log_ratio": series.ratio,
        "pe_window_pass": passes,
        "single_ratio": series.single_ratio,
        "verdict": verdict,
        "diameter": diameter,
    }
    if history.sensor_energy is not None:
        out["R_continuous"] = exc.continuous_R(history)
    return out


def run_monte_carlo(config: ScenarioConfig, *, keep_histories=False):
    """Run every replication and estimator in ``config`` and aggregate a :class:`RunReport`.

    With ``keep_histories`` the per-replication histories are returned as
    well, as ``(report, {(replication, estimator): history})``.
    """
    started = time.perf_counter()
    scenario = config.scenario()
    topology = config.topology(scenario.n_sensors)
    W = config.weight_matrix(topology)
    if "coop_gradient" in config.estimators and scenario.r:
        raise ConfigError("coop_gradient needs a plant without noise coefficients (r = 0)")
    n_steps, per = scenario.grid()
    h = scenario.h
    stride = _record_stride(config, h)
    noise_filter = scenario.d.coeffs
    N = scenario.n_sensors

    sums, norm_sums, finals, counts = {}, {}, {}, {e: 0 for e in config.estimators}
    sample_t = None
    audits, aborted, histories = [], [], {}
    excitation = oracle = None

    for rep in range(int(config.replications)):
        stream = NoiseStream(int(config.seed), h, rep)
        try:
            traj = simulate_network(scenario, stream)
        except SimulationAborted as err:
            aborted.append({"replication": rep, "estimator": None, "t": err.time, "message": str(err)})
            continue
        for name in config.estimators:
            try:
                hist = _run_estimator(name, traj, W, config, stride, noise_filter)
            except EstimatorDiverged as err:
                aborted.append({"replication": rep, "estimator": name, "t": err.time, "message": str(err)})
                continue
            err2 = hist.squared_error(traj.theta).T  # (N, S)
            if sample_t is None:
                sample_t = hist.t
            sums[name] = sums.get(name, 0.0) + err2
            norm_sums[name] = norm_sums.get(name, 0.0) + np.sqrt(err2)
            finals[name] = finals.get(name, 0.0) + hist.theta[-1]
            counts[name] += 1
            if keep_histories:
                histories[(rep, name)] = hist
            if name == "dls":
                audits.append(_audit_record(rep, hist))
            if name in ("dls", "standard_ls") and config.excitation and excitation is None:
                excitation = excitation_report(hist, topology.diameter, config)
            if name == "dls" and config.oracle and oracle is None:
                oracle = _oracle_summary(traj, W, hist, config, scenario)

    mse = {k: v / counts[k] for k, v in sums.items()}
    report = RunReport(
        config=config.to_dict(),
        estimators=list(config.estimators),
        n_sensors=N,
        theta_true=scenario.theta,
        t=np.zeros(0) if sample_t is None else sample_t,
        mse=mse,
        theta_err_norm={k: v / counts[k] for k, v in norm_sums.items()},
        final_theta={k: v / counts[k] for k, v in finals.items()},
        completed=counts,
        audits=audits,
        audit_summary=summarize_audits(audits),
        excitation=excitation,
        oracle=oracle,
        aborted=aborted,
        steps=n_steps,
        wall_clock=time.perf_counter() - started,
    )
    return (report, histories) if keep_histories else report


def _oracle_summary(traj, W, hist, config, scenario):
    if scenario.d.degree or scenario.r:
        return {"skipped": "oracle needs d(S) = 1 and r = 0"}
    n = traj.n_steps // traj.steps_per_fusion
    kw = dict(h=traj.h, steps_per_fusion=traj.steps_per_fusion, alpha=config.alpha, theta0=config.theta0)
    out = {"epoch": n}
    for label, extra in (("left", {}), ("trapezoid", {"quadrature": "trapezoid"}), ("no_prior", {"prior": False})):
        try:
            theta = normal_equation_oracle(traj.model_regressors, traj.y, W, n, **kw, **extra)
            out[label] = float(np.max(np.linalg.norm(theta - hist.theta[-1], axis=1)))
        except OracleSingular as err:
            out[label] = None
            out[f"{label}_note"] = str(err)
    return out


# export


def _open(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="")
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err


def write_mse_csv(report: RunReport, path):
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MSE_COLUMNS)
        for name in report.estimators:
            if name not in report.mse:
                continue
            mse, norm = report.mse[name], report.theta_err_norm[name]
            for i in range(report.n_sensors):
                for s, t in enumerate(report.t):
                    w.writerow((name, "mean", i + 1, float(t), float(mse[i, s]), float(norm[i, s])))


def write_excitation_csv(report: RunReport, path):
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXCITATION_COLUMNS)
        ex = report.excitation
        if ex is None:
            return
        for n in range(len(ex["R"])):
            flag = ex["pe_window_pass"][n]
            w.writerow((n, float(ex["epoch_t"][n]), float(ex["R"][n]), float(ex["lambda_min"][n]),
                        float(ex["log_ratio"][n]), "" if flag is None else str(bool(flag)).lower()))


def write_audit_csv(report: RunReport, path):
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AUDIT_COLUMNS)
        for a in report.audits:
            w.writerow(tuple(a[c] for c in AUDIT_COLUMNS))


def write_json(report: RunReport, path):
    with _open(path) as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")


def load_report(path) -> RunReport:
    with Path(path).open() as fh:
        return RunReport.from_dict(json.load(fh))


def export_report(report: RunReport, fmt: str, path):
    """Write ``report`` as ``json`` (one file) or ``csv`` (``path`` is a directory)."""
    if fmt == "json":
        write_json(report, path)
        return [Path(path)]
    if fmt != "csv":
        raise ValueError("format must be 'csv' or 'json'")
    out = Path(path)
    files = [out / "mse.csv", out / "excitation.csv", out / "audit.csv"]
    write_mse_csv(report, files[0])
    write_excitation_csv(report, files[1])
    write_audit_csv(report, files[2])
    return files
