"""Exception types shared across the package."""


class PerturbkitError(Exception):
    """Base class for all package errors."""


class InputShapeError(PerturbkitError, ValueError):
    """An array argument has the wrong length or shape."""


class NumericError(PerturbkitError, ArithmeticError):
    """A non-finite value appeared during evaluation."""


class ModelFormatError(PerturbkitError, ValueError):
    """A model or dataset file violates the documented JSON schema."""


class SizeGuardError(PerturbkitError, ValueError):
    """A dense Jacobian would exceed the materialization guard."""


class ZeroGradientError(PerturbkitError, ValueError):
    """The gradient vanished; the caller must dither or give up."""


class DegenerateJacobianError(PerturbkitError, ValueError):
    """The Jacobian is numerically zero; no dominant direction exists."""


class DivergenceError(PerturbkitError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")


class PartitionError(PerturbkitError, ValueError):
    """An index partition violates its invariants."""


class NoCompetitorError(PerturbkitError, ValueError):
    """A margin loss needs at least two classes."""
