"""Exception hierarchy shared by all estimation modules.

Two branches matter to callers: InputError covers malformed data,
parameters, or configuration (the CLI maps it to exit code 2), while
EstimationError covers failures that arise from valid inputs whose
content defeats an estimator (exit code 4).
"""

from __future__ import annotations


class TailbinError(Exception):
    """Base class for all package-specific errors."""


class InputError(TailbinError):
    """Invalid parameters, schemas, or configuration."""


class EstimationError(TailbinError):
    """Estimation failed on structurally valid input."""


class InvalidParameterError(InputError):
    """A numeric argument is outside its admissible range."""


class EmptyDataError(InputError):
    """An operation that needs data received none."""


class SchemaError(InputError):
    """A data file does not match the documented column layout."""


class ConfigError(InputError):
    """An experiment or CLI configuration is missing or inconsistent."""


class InsufficientDataError(EstimationError):
    """Fewer observations than the operation's stated minimum."""


class InsufficientTailError(EstimationError):
    """Too few observations at or above the tail threshold."""


class DomainError(EstimationError):
    """Values outside the mathematical domain (e.g. x <= 0 where logs are taken)."""


class DegenerateTailError(EstimationError):
    """Tail observations carry no usable variation."""


class DegenerateDataError(EstimationError):
    """Sample statistics needed by the operation are degenerate (e.g. zero spread)."""


class DegenerateOutcomeError(EstimationError):
    """Only one outcome class present in the estimation subset."""


class DegenerateDesignError(EstimationError):
    """Singular design matrix in a weighted regression."""


class DegenerateVarianceError(EstimationError):
    """The probability variance term pi*(1-pi) vanished where a ratio needs it."""


class InfeasibleInitError(EstimationError):
    """The optimizer's starting point violates the cone constraint."""


class FlatLikelihoodError(EstimationError):
    """The likelihood carries no information about the parameters."""


class EffectiveSampleError(EstimationError):
    """All kernel weights vanished; no effective local sample."""


class MissingUnitError(EstimationError):
    """A forecast was requested for a unit the fit does not retain."""


class AlignmentError(EstimationError):
    """Two forecast sets could not be matched unit by unit."""


class ConeViolationError(EstimationError):
    """An evaluation point leaves the cone where fitted indices are positive."""
