"""Exception types shared across the package."""


class SkeltrackError(Exception):
    """Base class for all package errors."""


class ConfigError(SkeltrackError, ValueError):
    """Invalid scenario or experiment configuration.

    ``field`` names the offending config key so the CLI can point at it.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(SkeltrackError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class InfeasibleError(SkeltrackError):
    """No candidate satisfies the optimization constraints.

    ``report`` carries the per-candidate diagnostics (violation curve,
    failing constraints) for the caller to print or serialize.
    """

    def __init__(self, message, report=None):
        self.report = report if report is not None else []
        super().__init__(message)
