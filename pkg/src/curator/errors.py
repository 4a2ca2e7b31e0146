"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CuratorError(Exception):
    """Base class for all errors raised by this package."""


class StorageFailure(CuratorError):
    """The persistence layer rejected a write; in-memory state is unchanged."""


class SchemaMismatch(CuratorError):
    """A persisted file declares a schema version this code does not read."""


class CorruptRecord(CuratorError):
    """A persisted line failed to parse.  Carries the 1-based line number."""

    def __init__(self, path: str, line_number: int, detail: str = ""):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: corrupt record{': ' + detail if detail else ''}")


class EmptyDataset(CuratorError):
    """An operation that needs at least one active sample found none."""


class EmptyInput(CuratorError):
    """An evaluation was asked for on an empty collection."""


class JudgeUnavailable(CuratorError):
    """Judge transport failed after exhausting retries."""


class MutationFailed(CuratorError):
    """The judge never produced a parseable mutation reply; caller skips it."""


class UnsupportedSize(CuratorError):
    """A generate call was made with a size the backend does not support.

    This is a programming error (callers must adapt sizes first) and is
    never retried.
    """


class BackendExhausted(CuratorError):
    """A backend kept failing after the maximum number of retry attempts."""


class BudgetExceeded(CuratorError):
    """Committing this call would push the cost ledger past the budget."""


class AllBackendsFailed(CuratorError):
    """Every backend in a fan-out call failed."""

    def __init__(self, failures: dict[str, Exception]):
        self.failures = failures
        parts = ", ".join(f"{k}: {type(v).__name__}" for k, v in failures.items())
        super().__init__(f"all backends failed ({parts})")


class NoValidBucket(CuratorError):
    """No bucket exists for the requested ratio at this resolution."""


class DomainMismatch(CuratorError):
    """Two domain->quality maps do not cover the same domain set."""


class DimensionMismatch(CuratorError):
    """Matrix shapes are inconsistent with the requested operation."""


class ConfigInvalid(CuratorError):
    """A run configuration failed validation.  Carries every violation."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


class UnknownQuery(CuratorError):
    """cmd_inspect received a query name it does not answer."""
