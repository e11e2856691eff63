"""Exception hierarchy shared across the package."""


class FlowcrystError(Exception):
    """Base class for all validation and runtime errors raised here."""


class ShapeError(FlowcrystError, ValueError):
    """Array shapes are inconsistent."""


class DomainError(FlowcrystError, ValueError):
    """A scalar or array argument lies outside its valid domain."""


class DataError(FlowcrystError, ValueError):
    """Input data violates a precondition (non-positive lengths, etc.)."""


class InsufficientDataError(DataError):
    """Not enough samples to fit or sample from."""


class DegenerateCellError(FlowcrystError, ValueError):
    """Lattice has non-positive volume."""


class NiggliViolationError(FlowcrystError, ValueError):
    """Lattice angles fall outside the reduced-cell range [60, 120]."""


class CapacityError(FlowcrystError, ValueError):
    """Atom count exceeds the configured cap."""


class ConfigError(FlowcrystError, ValueError):
    """Invalid run or loss configuration."""


class NumericError(FlowcrystError, ArithmeticError):
    """NaN/inf encountered where finite values are required."""


class PairingError(FlowcrystError, ValueError):
    """Paired corpora have mismatched lengths."""


class IntegrationError(NumericError):
    """ODE integration produced a non-finite state."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state at integration step {step}")
