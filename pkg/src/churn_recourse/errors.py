"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration values (bad dimensions, rates, counts)."""


class ParseError(ValueError):
    """Malformed input file; message identifies the offending row/column."""


class ArtifactError(FileNotFoundError):
    """A required pipeline artifact is missing or unreadable."""


class DimensionError(ValueError):
    """Vector/matrix shape does not match the expected feature space."""


class RecourseNotApplicableError(ValueError):
    """Recourse requested for a user already predicted as the desired class."""


class NumericalError(ArithmeticError):
    """Training or search hit non-finite values; message carries the iteration."""
