"""Exception types raised across the package."""


class ThermalRecoveryError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ThermalRecoveryError, ValueError):
    pass


class DegenerateDataError(ThermalRecoveryError, ValueError):
    """A regression column has no variance, so it cannot be standardized."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column!r} has zero variance")


class StepSizeError(ThermalRecoveryError, RuntimeError):
    """Gradient descent diverged; the learning rate is too large."""


class FitRejectedError(ThermalRecoveryError, ValueError):
    """The identified parameters are not physically valid."""


class SchemaError(ThermalRecoveryError, ValueError):
    pass


class TopologyError(ThermalRecoveryError, ValueError):
    pass


class SingularityError(ThermalRecoveryError, ArithmeticError):
    def __init__(self, joint, message=None):
        self.joint = joint
        super().__init__(message or f"actuator map singular at joint {joint!r}")


class ActuationDeficiencyError(ThermalRecoveryError, ArithmeticError):
    """The actuated joints cannot span the contact-consistent motions."""


class InvalidStartError(ThermalRecoveryError, ValueError):
    pass


class InfeasibleCommandError(ThermalRecoveryError, ValueError):
    pass


class NoStrategyError(ThermalRecoveryError, RuntimeError):
    pass
