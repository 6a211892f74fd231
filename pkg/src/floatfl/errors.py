"""Exception hierarchy shared across the framework."""


class FloatError(Exception):
    """Base class for all framework errors."""


class ConfigError(FloatError):
    """Invalid campaign, task, or dataset configuration."""


class InputError(FloatError):
    """Malformed runtime input (bad batch, dimension mismatch, non-finite values)."""


class ProtocolError(FloatError):
    """Malformed frame or message on the wire."""


class AggregationError(FloatError):
    """Aggregation called with no usable client updates."""


class EvaluationError(FloatError):
    """Metric combination called with no usable evaluation results."""
