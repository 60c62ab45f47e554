"""Exception types shared across the package."""


class LaneATTError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LaneATTError, ValueError):
    """Operand shapes are not conformable for the requested operation."""

    def __init__(self, op, expected, got):
        self.op = op
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: expected {expected}, got {got}")


class TapeError(LaneATTError, RuntimeError):
    """A tensor was not recorded on the tape used for the backward pass."""


class ConfigError(LaneATTError, ValueError):
    """Invalid configuration value. ``field`` is a dotted path such as ``loss.gamma``."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(LaneATTError, ValueError):
    """Malformed input data. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class EmptyAssignmentError(LaneATTError, ValueError):
    """Target assignment produced neither positives nor negatives."""
