"""Exception hierarchy shared by every afbench module."""


class AfbenchError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 2


class ArgumentError(AfbenchError, ValueError):
    pass


class FormatError(AfbenchError):
    pass


class ValidationError(AfbenchError):
    pass


class TopologyError(AfbenchError):
    pass


class DegenerateGeometryError(AfbenchError):
    pass


class StatsError(AfbenchError):
    pass


class ShapeError(AfbenchError, ValueError):
    pass


class ConfigError(AfbenchError):
    pass


class IoError(AfbenchError, OSError):
    pass


class RankError(AfbenchError):
    exit_code = 3


class DivergenceError(AfbenchError):
    exit_code = 3

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
