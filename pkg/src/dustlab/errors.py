"""Exception types and warning categories used across the package."""


class DustlabError(Exception):
    """Base class for all package-specific errors."""


class CompactnessError(DustlabError):
    """Star is at or beyond the compactness limit where central pressure diverges."""


class NoSurfaceError(DustlabError):
    """Polytrope has no finite surface (no zero crossing within the budget)."""


class ConfigError(DustlabError):
    """Invalid or unknown configuration entry."""


class StabilityError(DustlabError):
    """Explicit time step violates the stability bound."""


class NormalizationError(DustlabError):
    """Requested density cannot be normalized (divergent mass)."""


class QuadratureError(DustlabError):
    """Numerical quadrature failed to converge under panel refinement."""


class InsufficientPaths(DustlabError):
    """Too few Monte-Carlo paths for the requested statistic."""


class InsufficientData(DustlabError):
    """Not enough usable samples (e.g. no quadratic variation to resample)."""


class DomainError(DustlabError):
    """Argument outside the mathematical domain of the operation."""


class SingularStartWarning(UserWarning):
    """Integration started exactly on the square-root branch point u = 1."""
