"""Exception hierarchy shared across the package.

The split matters for the command line tool, which maps branches of this
hierarchy onto exit codes: data problems, numeric failures, and
non-convergence are reported differently.
"""

from __future__ import annotations


class GpscheckError(Exception):
    """Base class for all package errors."""


class DataError(GpscheckError):
    """Invalid or inconsistent input data or configuration."""


class EmptyGroupError(DataError):
    """A requested treatment level has no observations."""


class KernelSizeError(DataError):
    """Sample size exceeds the dense kernel soft cap."""


class NumericError(GpscheckError):
    """A numerical failure that is not a data-format problem."""


class SingularDeltaError(NumericError):
    """The score outer-product matrix Delta_{n,t} is numerically singular."""


class SeparationError(NumericError):
    """Fitted linear indices hit the clamp, so the likelihood is maximized
    at the artificial boundary rather than an interior stationary point
    (quasi-complete separation)."""


class SingularHessianError(NumericError):
    """The negative Hessian cannot be factorized at the optimum."""


class DegenerateWeightsError(NumericError):
    """Inverse probability weights sum to zero or are non-finite."""


class TooManyFailedResamplesError(NumericError):
    """More than the tolerated share of bootstrap resamples failed to fit."""


class NotConvergedError(GpscheckError):
    """Newton iteration exhausted max_iter without meeting the tolerance."""
