"""Exception types shared across the package."""


class MsforecastError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MsforecastError):
    """Invalid or inconsistent configuration."""


class ContractError(MsforecastError):
    """Caller violated an operation's input contract (usually a shape mismatch)."""


class DataError(MsforecastError):
    """Malformed, truncated or out-of-range data."""


class TrainingDiverged(MsforecastError):
    """Loss became non-finite during optimization."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
