"""Sparsity-enhanced decision feedback equalization for SC-FDMA style systems."""

from .constellation import Constellation, Modulation, count_bit_errors, detect, get_constellation, modulate
from .dfe import DfeConfig, DfeResult, ErrorEstimator, ThresholdRule, run_dfe
from .equalizers import EqualizerKind, SoftEstimate, equalize, equalize_and_detect
from .errors import (
    ConfigurationError,
    SearchSpaceTooLarge,
    ShapeError,
    SingularityError,
    SparseDfeError,
    UsageError,
)
from .solvers import SolveResult, SolverConfig, box_ls, l1_constrained, ridge_ls
from .system_model import SpreadingKind, SystemInstance, make_channel, make_instance, make_spreading, snr_to_sigma2, transmit

__version__ = "0.1.0"

__all__ = [
    "Constellation",
    "ConfigurationError",
    "DfeConfig",
    "DfeResult",
    "EqualizerKind",
    "ErrorEstimator",
    "Modulation",
    "SearchSpaceTooLarge",
    "ShapeError",
    "SingularityError",
    "SoftEstimate",
    "SolveResult",
    "SolverConfig",
    "SparseDfeError",
    "SpreadingKind",
    "SystemInstance",
    "ThresholdRule",
    "UsageError",
    "box_ls",
    "count_bit_errors",
    "detect",
    "equalize",
    "equalize_and_detect",
    "get_constellation",
    "l1_constrained",
    "make_channel",
    "make_instance",
    "make_spreading",
    "modulate",
    "ridge_ls",
    "run_dfe",
    "snr_to_sigma2",
    "transmit",
]
