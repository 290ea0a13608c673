"""Exception hierarchy shared by every gradcomp module."""


class GradCompError(Exception):
    """Base class for all errors raised by gradcomp."""


class ParameterError(GradCompError, ValueError):
    """Distribution parameters outside their domain (alpha <= 0, beta <= 0, ...)."""


class InputError(GradCompError, ValueError):
    """Caller supplied data that violates an operation's precondition."""


class FitError(GradCompError):
    """Parameter estimation failed.

    Attributes:
        diagnostics: free-form dict describing what the estimator saw.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class CodingError(GradCompError):
    """A symbol cannot be coded with the given codebook."""


class CorruptionError(GradCompError):
    """Encoded data failed to decode or did not verify.

    Attributes:
        offset: bit (for payloads) or byte (for containers) position at which
            the problem was detected, when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class FormatError(GradCompError):
    """A container file is malformed (bad magic, version, truncation, ...)."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(GradCompError, ValueError):
    """Experiment configuration is invalid."""
