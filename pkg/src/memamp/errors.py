"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent or invalid construction parameters."""


class DimensionError(ValueError):
    """Vector length does not match the operator."""


class DegenerateSpectrumError(ValueError):
    """The operator has no usable spectrum (e.g. it is identically zero)."""


class OverflowContractError(ArithmeticError):
    """A scaled-moment evaluation would leave the double range.

    Raised when the caller's coefficient did not decay fast enough to
    compensate the growth of the moment it multiplies.
    """


class LedgerError(ValueError):
    """A covariance entry that must be positive is not."""


class NumericalFailure(RuntimeError):
    """An iteration cannot continue (overflow, non-finite normalizer, ...)."""

    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason
