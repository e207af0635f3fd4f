"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Fields, bases or coefficient arrays have incompatible shapes or grids."""


class BlowUpError(RuntimeError):
    """A full-order integration produced non-finite values."""

    def __init__(self, message, step_index=None, time=None):
        super().__init__(message)
        self.step_index = step_index
        self.time = time


class NoUniqueShiftError(ValueError):
    """The template correlation is flat, so no shift maximizes it."""


class SliceSingularityError(ZeroDivisionError):
    """The shifting-speed denominator vanished: the state left the slice chart."""


class SingularRowError(SliceSingularityError):
    """A training tuple has a vanishing shifting-speed denominator."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class RankError(ValueError):
    """Requested more POD modes than the snapshot ensemble supports."""


class ConfigError(ValueError):
    """A run configuration failed validation."""
