"""Exact Gaussian analysis of conditional diffusion samplers."""

__version__ = "0.1.0"

from .schedule import Schedule, linear_schedule
from .gaussian import GaussianLaw, LinearInverseProblem, wasserstein2
from .samplers import CGDM, DPS, PiGDM, parse_model
from .errors import NumericalInstabilityError, ParameterError, SingularityError

__all__ = [
    "Schedule",
    "linear_schedule",
    "GaussianLaw",
    "LinearInverseProblem",
    "wasserstein2",
    "CGDM",
    "DPS",
    "PiGDM",
    "parse_model",
    "NumericalInstabilityError",
    "ParameterError",
    "SingularityError",
]
