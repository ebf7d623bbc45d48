"""Exception hierarchy shared by every module."""


class TimeCnnError(Exception):
    """Base class for all package errors."""


class ShapeError(TimeCnnError, ValueError):
    pass


class ConfigError(TimeCnnError, ValueError):
    pass


class DataError(TimeCnnError, ValueError):
    pass


class FormatError(TimeCnnError, ValueError):
    """Malformed or incompatible checkpoint file."""


class NonFiniteError(TimeCnnError, FloatingPointError):
    pass
