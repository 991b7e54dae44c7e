"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ConfigError -> 2, data/format errors -> 3,
NumericError -> 4.
"""


class VADError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(VADError, ValueError):
    """Invalid configuration or hyperparameter."""


class DimensionError(VADError, ValueError):
    """Shapes or lengths that do not line up."""


class UnsupportedRankError(DimensionError):
    pass


class EmptyReductionError(VADError, ValueError):
    pass


class NonScalarBackwardError(VADError, ValueError):
    pass


class NumericError(VADError, ArithmeticError):
    """NaN or Inf produced where a finite value is required."""


class InvalidCovarianceError(VADError, ValueError):
    pass


class InvalidKLError(VADError, ValueError):
    pass


class ParseError(VADError, ValueError):
    """Malformed CSV or IDX input."""


class FormatError(VADError, ValueError):
    """Malformed or incompatible checkpoint file."""
