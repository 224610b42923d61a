"""Config-driven experiments (toy inpainting, ADSN deblurring and generation)."""

from .config import ConfigError, ExperimentConfig, parse_config, validate_config
from .run import execute, read_curves, run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "validate_config",
    "execute",
    "read_curves",
    "run_experiment",
]
