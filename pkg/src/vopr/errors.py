"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class VoprError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(VoprError):
    """Invalid configuration value or inconsistent parameter headers."""


class DataFormatError(VoprError):
    """Malformed input data: parse failures, bad ids, broken invariants."""


class DegenerateInputError(VoprError):
    """Computation cannot proceed: degenerate cloud, empty matrix, etc."""
