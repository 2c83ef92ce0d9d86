"""Exception types shared across the package."""


class TorusminError(Exception):
    pass


class ConfigError(TorusminError, ValueError):
    """Invalid experiment or metric configuration."""


class BudgetError(ConfigError):
    """Fourier amplitudes exceed the admissible budget."""


class RegionError(TorusminError, ValueError):
    """A query leaves the sampled planar region."""


class StepSizeError(TorusminError, ValueError):
    pass


class HorizonError(TorusminError, ValueError):
    pass


class InsufficientDataError(TorusminError, ValueError):
    pass


class PreconditionError(TorusminError, ValueError):
    pass


class InstabilityError(TorusminError, RuntimeError):
    """A numerical construction failed its own stability check."""
