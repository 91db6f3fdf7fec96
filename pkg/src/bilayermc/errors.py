"""Exception types shared across the package."""


class BilayerError(Exception):
    """Base class for errors raised by this package."""


class MappingError(BilayerError):
    """Base class for bilayer-to-monolayer decomposition failures."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class SymmetryViolation(MappingError):
    """Layer-r terms do not match the antiunitary image of the layer-l terms."""


class SignViolation(MappingError):
    """A cross-layer coupling has a negative extracted rate."""


class NonFactorizable(MappingError):
    """A cross-layer term is not of the form O on layer l times its conjugate on layer r."""


class PositivityFailure(MappingError):
    """kappa_i + 2 h_i - L_i^dag L_i is not positive semidefinite."""


class SamplerError(BilayerError):
    pass


class DegenerateChain(SamplerError):
    """Too many retained samples had a vanishing denominator, or a chain is unusable."""


class NumericalFailure(BilayerError):
    """A numerical consistency check failed (NaN, non-negligible imaginary part, ...)."""


class KrylovConvergenceError(NumericalFailure):
    """Krylov subspace iteration did not reach the residual tolerance."""


class SizeLimitExceeded(BilayerError):
    """Requested instance is too large for an exact/enumerative routine."""


class ConfigError(BilayerError):
    """Malformed or inconsistent run configuration."""
