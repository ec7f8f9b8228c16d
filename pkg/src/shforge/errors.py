"""Exception types raised across the package."""


class ShForgeError(Exception):
    """Base class for all package errors."""


class InputError(ShForgeError, ValueError):
    """Malformed or invariant-violating input data (CLI exit code 1)."""


class ModelFormatError(InputError):
    pass


class MotionFormatError(InputError):
    pass


class CorruptRasterError(InputError):
    pass


class InvalidLabelError(InputError):
    pass


class MetricsError(InputError):
    pass


class SplitError(InputError):
    pass
