"""Exception hierarchy. Every domain error raised by ldb derives from LdbError."""

from __future__ import annotations


class LdbError(Exception):
    """Base class for all ldb domain errors."""


class NotFound(LdbError):
    """A chunk, snapshot, branch, table, or key does not exist."""


class InvalidInput(LdbError):
    """Malformed caller input (e.g. non-increasing keys)."""


class InvalidRange(LdbError):
    """Scan range with lo > hi."""


class InvalidRecipe(LdbError):
    """Virtual-chunk recipe is cyclic or otherwise unusable."""


class MaterializationError(LdbError):
    """A virtual chunk could not be turned into physical data."""


class CorruptTree(LdbError):
    """Interior node ordering or structure violates tree invariants."""


class ConstraintViolation(LdbError):
    """Key-existence rules violated by a mutation batch."""

    def __init__(self, message: str, keys: list | None = None):
        super().__init__(message)
        self.keys = keys or []


class PolicyMismatch(LdbError):
    """Two trees with different chunking policies were diffed."""


class EncodingError(LdbError):
    """Row values do not fit the declared column types."""


class DecodingError(LdbError):
    """Chunk payload bytes do not match the expected layout."""


class AssemblyError(LdbError):
    """Row slices with mismatched primary keys cannot be assembled."""


class SchemaError(LdbError):
    """Invalid schema definition or schema-change operation."""


class SchemaMismatch(LdbError):
    """Cross-schema snapshot diff is not supported."""


class NotHead(LdbError):
    """Commit addressed to a snapshot that is not the branch head."""


class SyncTargetImmutable(LdbError):
    """Direct commit to the target branch of an active unidirectional sync."""


class NameTaken(LdbError):
    """Branch name already in use."""


class MergeConflict(LdbError):
    """Both sides changed the same key to different values.

    ``conflicts`` holds (table, key, src_value, dst_value) tuples; values are
    None for deletions.
    """

    def __init__(self, conflicts: list):
        self.conflicts = conflicts
        lines = ", ".join(f"{t}[{k!r}]" for t, k, _, _ in conflicts[:5])
        more = "" if len(conflicts) <= 5 else f" (+{len(conflicts) - 5} more)"
        super().__init__(f"merge conflict on {lines}{more}")


class IllegalSyncTopology(LdbError):
    """Sync attachment violates the branch-role rules."""


class NotBidirectionallyCompatible(LdbError):
    """Requested sync direction exceeds what the transform pair supports."""


class DirectionUnavailable(LdbError):
    """Row transform invoked in a direction the operation does not support."""


class ViewError(LdbError):
    """Invalid view definition."""


class RefusingToOverwrite(LdbError):
    """Experiment asked to run in a non-empty store root."""
