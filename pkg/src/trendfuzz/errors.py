"""Exception hierarchy shared by all trendfuzz modules."""


class TrendfuzzError(Exception):
    """Base class for every error raised by trendfuzz."""


class ConfigError(TrendfuzzError):
    """Invalid configuration: bad value, missing key, size mismatch."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(TrendfuzzError):
    """A persisted artifact has the wrong shape."""


class PreconditionError(TrendfuzzError):
    """An operation was called in a state it does not accept."""


class AdapterError(TrendfuzzError):
    """A fuzzer process could not be spawned or driven."""

    def __init__(self, message, stderr=""):
        self.stderr = stderr
        if stderr:
            message = f"{message}\n--- stderr ---\n{stderr.strip()}"
        super().__init__(message)


class UnsupportedScalingError(AdapterError):
    """Fuzzer has no scale command but more than one instance was requested."""


class CampaignAborted(TrendfuzzError):
    """Every fuzzer in the campaign failed."""
