"""Convex decomposition of quantum measurements into source-independent and
source-correlated data, with the supporting quantum-information toolkit."""

from . import channels, extremal, infomeasures, numerics, quantum, separation, typicality
from .channels import KrausChannel, decompose_channel, entropy_exchange, sigma_search
from .errors import (
    DegenerateError,
    DomainError,
    NumericalError,
    QmdError,
    SizeLimitError,
    ValidationError,
)
from .extremal import chrysler_benchmark, extremal_decompose, is_extremal
from .infomeasures import entropy_defect, shannon_entropy, von_neumann_entropy
from .quantum import Ensemble, Povm, induced_ensemble, sqrt_measurement
from .separation import SeparationParams, build_separation

__version__ = "0.1.0"

__all__ = [
    "channels",
    "extremal",
    "infomeasures",
    "numerics",
    "quantum",
    "separation",
    "typicality",
    "KrausChannel",
    "decompose_channel",
    "entropy_exchange",
    "sigma_search",
    "DegenerateError",
    "DomainError",
    "NumericalError",
    "QmdError",
    "SizeLimitError",
    "ValidationError",
    "chrysler_benchmark",
    "extremal_decompose",
    "is_extremal",
    "entropy_defect",
    "shannon_entropy",
    "von_neumann_entropy",
    "Ensemble",
    "Povm",
    "induced_ensemble",
    "sqrt_measurement",
    "SeparationParams",
    "build_separation",
]
