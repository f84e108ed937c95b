"""Exception hierarchy shared across the package."""


class BayesPLSError(Exception):
    """Base class for all package errors."""


class ShapeError(BayesPLSError, ValueError):
    """Array dimensions are inconsistent."""


class InputError(BayesPLSError, ValueError):
    """Input values are invalid (non-finite, out of range, ...)."""


class ConfigError(BayesPLSError, ValueError):
    """A configuration object or file is invalid."""


class FitError(BayesPLSError, RuntimeError):
    """Newton iterations did not converge.

    The last iterate and its gradient norm are kept so callers can inspect
    or restart from them.
    """

    def __init__(self, message, theta=None, gradient_norm=None):
        super().__init__(message)
        self.theta = theta
        self.gradient_norm = gradient_norm


class NumericalError(BayesPLSError, ArithmeticError):
    """A matrix that must be positive definite is not."""


class OraclePrecisionError(BayesPLSError, RuntimeError):
    """A brute-force oracle cannot guarantee its stated precision."""

    def __init__(self, message, suggested_lower=None, suggested_upper=None):
        super().__init__(message)
        self.suggested_lower = suggested_lower
        self.suggested_upper = suggested_upper


class DiagnosticError(OraclePrecisionError):
    """Monte Carlo effective sample size is too small."""

    def __init__(self, message, ess=None):
        super().__init__(message)
        self.ess = ess


class DegenerateStartError(BayesPLSError, ValueError):
    """The labeled set does not contain both classes."""

    def __init__(self, missing_class):
        super().__init__(f"labeled data contains no rows of class {missing_class}")
        self.missing_class = missing_class


class EngineError(BayesPLSError, RuntimeError):
    """A self-training run aborted; the partial trajectory is attached."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DataError(BayesPLSError, ValueError):
    """Malformed data file or trajectory contents."""


class SchemaError(DataError):
    """A data file does not match its declared schema."""


class GenerationError(BayesPLSError, RuntimeError):
    """Synthetic data generation exhausted its retries."""


class ComparisonError(BayesPLSError, ValueError):
    """Summary files cannot be paired across criteria."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)
