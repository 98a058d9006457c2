"""PUE attack detection by infinite-GMM clustering with transferred fingerprint knowledge."""

__version__ = "0.1.0"

from .akd import AKD, AkdEntry, AkdParams, Suggestion, confidence, merge_similar, suggest_labels
from .core import (ConfigError, DimensionError, DistanceMetric, DomainError, Fingerprint, Labeling,
                   TimeFrame, read_dataset, write_dataset)
from .harness import ExperimentConfig, preset, run_sweep, run_trial
from .igmm import GibbsConfig, Hyperparameters, beta_function, gibbs_cluster
from .metrics import attack_detected, hit_rate, transfer_recovery
from .synthgen import ScenarioConfig
from .transfer import DecisionPolicy, map_labels, merge_decisions, update_akd

__all__ = [
    "AKD", "AkdEntry", "AkdParams", "ConfigError", "DecisionPolicy", "DimensionError", "DistanceMetric",
    "DomainError", "ExperimentConfig", "Fingerprint", "GibbsConfig", "Hyperparameters", "Labeling",
    "ScenarioConfig", "Suggestion", "TimeFrame", "attack_detected", "beta_function", "confidence",
    "gibbs_cluster", "hit_rate", "map_labels", "merge_decisions", "merge_similar", "preset",
    "read_dataset", "run_sweep", "run_trial", "suggest_labels", "transfer_recovery", "update_akd",
    "write_dataset",
]
