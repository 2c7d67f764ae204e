"""Exception hierarchy shared by all skillcam modules.

Every error carries a short machine-greppable ``code`` so the CLI can emit
``error[<code>]: <message>`` lines and scripts can match on them.
"""


class SkillcamError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class ShapeError(SkillcamError):
    """Array shapes are incompatible with the requested operation."""

    code = "shape"


class EmptyInputError(SkillcamError):
    """An input that must contain at least one frame/row is empty."""

    code = "empty"


class DomainError(SkillcamError):
    """A scalar argument lies outside its valid domain."""

    code = "domain"


class ParseError(SkillcamError):
    """A data file could not be parsed; names the file and line."""

    code = "parse"

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{loc} {message}".strip())
        self.path = path
        self.line = line


class ConfigError(SkillcamError):
    """A configuration value (grouping, column map, manifest, flags) is invalid."""

    code = "config"


class NonFiniteLossError(SkillcamError):
    """Training produced a NaN/Inf loss; carries epoch and trial identity."""

    code = "nonfinite"

    def __init__(self, message, epoch=None, trial_id=None):
        super().__init__(message)
        self.epoch = epoch
        self.trial_id = trial_id
