"""Exception types shared across the package."""


class QvaeError(Exception):
    """Base class for errors raised by this package."""


class DomainError(QvaeError, ValueError):
    """An argument lies outside the domain of a function."""


class DimensionError(QvaeError, ValueError):
    """Array dimensions are inconsistent."""


class DefinitenessError(QvaeError, ValueError):
    """A covariance built from a Tsallis mixture is not positive definite."""


class GradientStateError(QvaeError, RuntimeError):
    """Backward pass requested on a graph whose gradients were not reset."""


class FormatError(QvaeError, ValueError):
    """A binary or text file does not follow its documented layout."""


class ConfigError(QvaeError, ValueError):
    """An experiment configuration is invalid."""
