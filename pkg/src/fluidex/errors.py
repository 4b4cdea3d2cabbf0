"""Exception and warning types shared across the package."""


class FluidexError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FluidexError):
    """Invalid configuration: unknown flow, bad parameter, violated stability bound."""


class UnsupportedOperationError(FluidexError):
    """Operation not defined for this flow (e.g. scalar vorticity gradient in 3D)."""


class UnsupportedClassError(FluidexError):
    """Perturbation class undefined or empty for this flow."""


class NumericalBlowupError(FluidexError):
    """Integration produced non-finite values."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ContractViolationError(FluidexError):
    """An input violated a documented precondition (e.g. non-solenoidal field)."""


class ResolutionError(FluidexError):
    """The requested carrier frequency does not fit the grid resolution."""


class HypothesisViolationError(FluidexError):
    """Parameters violate a hypothesis of the scaling estimate being measured."""


class TruncationWarning(UserWarning):
    """Field has energy outside the operator truncation; only the in-band part is used."""


class EmptyClassWarning(UserWarning):
    """A perturbation class has no admissible points on this flow."""
