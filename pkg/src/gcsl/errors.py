from __future__ import annotations


class ContractViolation(ValueError):
    """An operation was called with arguments outside its contract."""


class NotReady(RuntimeError):
    """The replay buffer holds no data yet; retry after collecting more."""


class ConfigError(ValueError):
    """A run configuration is malformed, incomplete or references missing files."""


class EnumerationBudgetExceeded(RuntimeError):
    """An exact oracle would have to enumerate more trajectories than allowed."""
