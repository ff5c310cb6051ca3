"""Exception hierarchy shared by every module."""

import numpy as np


class SparseDfeError(Exception):
    """Base class for all package errors."""


class ShapeError(SparseDfeError, ValueError):
    """Array lengths or matrix dimensions do not agree."""


class ConfigurationError(SparseDfeError, ValueError):
    """A parameter combination is invalid (e.g. Hadamard with m not a power of two)."""


class SingularityError(SparseDfeError, np.linalg.LinAlgError):
    """A normal-equations matrix could not be factorized."""


class SearchSpaceTooLarge(SparseDfeError, ValueError):
    """Exhaustive ML search was refused because the alphabet^m is too big."""


class UsageError(SparseDfeError, ValueError):
    """Bad command-line usage: unknown flag, bad token, missing value."""
