"""
Exception hierarchy shared by every orlicz-lab module.
"""


class LabError(Exception):
    """Base class; the CLI turns these into exit status 2."""


class ParameterError(LabError, ValueError):
    """An argument is outside its documented range."""


class MethodError(LabError):
    """The requested computation method does not apply to the inputs."""


class DegenerateMeasureError(LabError):
    """The measure has no usable second moment."""


class PreconditionError(LabError):
    """A documented precondition of an operation does not hold."""


class ConfigError(LabError):
    """An experiment config is inconsistent with its scenario."""
