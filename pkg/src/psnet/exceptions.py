from __future__ import annotations

from pathlib import Path


class PSNetError(Exception):
    """Base exception for psnet."""


class ConfigError(PSNetError):
    """Raised when a configuration value is invalid or unknown."""


class InputShapeError(PSNetError, ValueError):
    """Raised when tensor or image shapes violate a size contract."""


class ContractError(PSNetError):
    """Raised when a module is called with arguments its contract forbids."""


class DatasetError(PSNetError):
    """Raised when dataset files are missing, unmatched, or empty."""


class CheckpointError(PSNetError):
    """Raised when a checkpoint cannot be read or does not fit the config."""


class NonFiniteLossError(PSNetError):
    """Raised when a loss term becomes NaN or infinite."""

    def __init__(self, term: str, last_good: Path | None = None) -> None:
        self.term = term
        self.last_good = last_good
        msg = f"Loss term '{term}' is not finite"
        if last_good is not None:
            msg += f"; last good checkpoint: {last_good}"
        super().__init__(msg)
