"""Exception types shared across the package."""


class RiccdiffError(Exception):
    """Base class for package errors."""


class DimensionMismatchError(RiccdiffError, ValueError):
    """Operands have incompatible shapes."""


class NotPositiveSemidefiniteError(RiccdiffError, ValueError):
    """A matrix required to be PSD has an eigenvalue below tolerance."""


class PreconditionViolatedError(RiccdiffError, ValueError):
    """A documented operation precondition does not hold."""


class ThresholdExceededError(RiccdiffError, ValueError):
    """The fluctuation parameter lies above the applicable threshold."""


class SolverFailureError(RiccdiffError, RuntimeError):
    """An iterative solver failed to converge."""


class StepSizeTooLargeError(RiccdiffError, RuntimeError):
    """A deterministic integration step broke the PSD invariant."""


class CollisionFailureError(RiccdiffError, RuntimeError):
    """Eigenvalue ordering could not be preserved within the halving budget."""


class InsufficientDataError(RiccdiffError, ValueError):
    """Too few usable samples for the requested diagnostic."""


class ConfigError(RiccdiffError, ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
