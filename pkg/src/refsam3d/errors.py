"""Exception types shared across the package."""


class RefSAM3DError(Exception):
    """Base class for all package errors."""


class DimensionError(RefSAM3DError, ValueError):
    """Array shapes do not conform."""


class ConfigError(RefSAM3DError, ValueError):
    """A configuration value or combination is invalid."""


class InputError(RefSAM3DError, ValueError):
    """User-supplied data is unusable (empty text, non-binary mask, ...)."""


class FormatError(RefSAM3DError, ValueError):
    """A file does not follow the expected binary layout."""


class CorruptionError(FormatError):
    """A file or token stream is truncated or holds out-of-range values."""


class EvaluationError(RefSAM3DError, ArithmeticError):
    """A function produced a non-finite value where a finite one was required."""


class UndefinedMetricError(RefSAM3DError, ValueError):
    """A metric is undefined for the given masks (e.g. Hausdorff of an empty mask)."""


class GenerationError(RefSAM3DError, RuntimeError):
    """Synthetic data could not be generated under the requested constraints."""
