"""Distributed least squares for continuous-time stochastic regression over sensor networks."""

from .estimator import (
    CooperativeGradient,
    DistributedLS,
    EstimateHistory,
    EstimatorDiverged,
    StandardLS,
    diffuse,
    mil_update,
    run_coop_gradient,
    run_dls,
    run_standard_ls,
)
from .excitation import ExcitationSeries, accumulate_R, cec_verdict, lambda_min_series, pe_window_check
from .harness import RunReport, ScenarioConfig, export_report, load_report, normal_equation_oracle, run_monte_carlo
from .network import NetworkTopology, build_topology, metropolis_weights, ring_topology, weight_power_floor
from .plant import PlantScenario, Trajectories, Waveform, rlc_scenario, simulate_network, synthetic12_scenario
from .signal import NoiseStream, PolynomialInS, SignalTape, apply_poly, spr_check

__version__ = "0.1.0"

__all__ = [
    "CooperativeGradient", "DistributedLS", "EstimateHistory", "EstimatorDiverged", "StandardLS",
    "diffuse", "mil_update", "run_coop_gradient", "run_dls", "run_standard_ls",
    "ExcitationSeries", "accumulate_R", "cec_verdict", "lambda_min_series", "pe_window_check",
    "RunReport", "ScenarioConfig", "export_report", "load_report", "normal_equation_oracle", "run_monte_carlo",
    "NetworkTopology", "build_topology", "metropolis_weights", "ring_topology", "weight_power_floor",
    "PlantScenario", "Trajectories", "Waveform", "rlc_scenario", "simulate_network", "synthetic12_scenario",
    "NoiseStream", "PolynomialInS", "SignalTape", "apply_poly", "spr_check",
]
