"""Integrated detection and stitching decoder for uncoupled unsourced random access."""

from .decoder import PenaltyConfig, decode_session, decode_subslot
from .errors import ConfigError, DomainError, NumericalError
from .harness import ExperimentSpec, mse_trace_experiment, run_trials
from .ml_detector import DetectionConfig, solve_p0
from .system import SystemConfig, simulate_trial

__all__ = [
    "ConfigError",
    "DetectionConfig",
    "DomainError",
    "ExperimentSpec",
    "NumericalError",
    "PenaltyConfig",
    "SystemConfig",
    "decode_session",
    "decode_subslot",
    "mse_trace_experiment",
    "run_trials",
    "simulate_trial",
    "solve_p0",
]

__version__ = "0.1.0"
