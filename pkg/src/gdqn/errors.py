"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration (bad dims, bad parameter combination)."""


class ShapeError(ValueError):
    """Array or vector dimensions do not match the expected shape."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class StateError(RuntimeError):
    """Operation called on an object in the wrong state (e.g. step after terminal)."""


class ParseError(ValueError):
    """Malformed serialized data.

    `offset` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class MetricError(ValueError):
    """Metric requested over an empty episode set."""
