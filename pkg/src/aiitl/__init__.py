"""Human-in-the-loop and AI-in-the-loop classification systems at desk scale."""
from .allocation import GatingModel, Reason, Route, expert_selection
from .config import ExperimentConfig, default_config, load_config, parse_config
from .datasets import Dataset, DomainSpec, StreamSchedule, build_stream, generate_gaussian_domain
from .detectors import OODDetector, calibrate_threshold, mahalanobis_score, msp_score, odin_score
from .experts import ArtificialExpert, ExpertPool, HumanOracle, InclusionPolicy
from .metrics import accuracy, beta_sweep, crossover_beta, human_effort, utility
from .nn import MLPClassifier, softmax_with_temperature
from .simulation import BaselineKind, RunTrace, run_baseline, run_experiment

__all__ = [
    "ArtificialExpert", "BaselineKind", "Dataset", "DomainSpec", "ExperimentConfig",
    "ExpertPool", "GatingModel", "HumanOracle", "InclusionPolicy", "MLPClassifier",
    "OODDetector", "Reason", "Route", "RunTrace", "StreamSchedule", "accuracy",
    "beta_sweep", "build_stream", "calibrate_threshold", "crossover_beta",
    "default_config", "expert_selection", "generate_gaussian_domain", "human_effort",
    "load_config", "mahalanobis_score", "msp_score", "odin_score", "parse_config",
    "run_baseline", "run_experiment", "softmax_with_temperature", "utility",
]
