"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Raised when arguments fall outside a documented contract."""


class NumericalError(RuntimeError):
    """Raised when a quadrature or inversion fails to reach its tolerance."""


class SamplerError(RuntimeError):
    """Raised when a rejection sampler exceeds its iteration budget."""
