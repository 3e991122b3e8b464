from __future__ import annotations


class LeakLabError(Exception):
    """Base class for every error raised by leaklab."""


class DomainError(LeakLabError, ValueError):
    """An input violates an operation's precondition."""


class ManifestParseError(DomainError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IntegrityError(LeakLabError):
    """A split plan references frames or videos that do not exist, or lies about its flags."""


class TrainingDivergedError(LeakLabError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss!r})")
        self.iteration = iteration
        self.loss = loss


class UndefinedCorrelationError(DomainError):
    """Correlation of a constant sequence; never reported as zero."""


class StaleCacheError(LeakLabError):
    """A cached feature store does not belong to the extractor or dataset asking for it."""


class ConfigError(LeakLabError):
    """An experiment config document failed validation."""
