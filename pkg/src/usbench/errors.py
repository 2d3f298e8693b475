"""Exception hierarchy shared by every subsystem."""


class UsbenchError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(UsbenchError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DegenerateInputError(UsbenchError, ValueError):
    """Input carries no usable information (e.g. an all-zero envelope)."""


class ShapeError(UsbenchError, ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes " + " and ".join(str(s) for s in self.shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UsageError(UsbenchError, RuntimeError):
    """An API was called in a state where the call makes no sense."""


class SpecError(UsbenchError, ValueError):
    """A model specification cannot be realised against an input shape."""


class TrainingError(UsbenchError, RuntimeError):
    """Training produced a non-finite value."""


class DataError(UsbenchError, ValueError):
    """A dataset on disk or in memory violates the documented layout."""
