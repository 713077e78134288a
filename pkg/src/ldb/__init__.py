"""ldb: an embedded, versioned, branching storage engine.

Data lives in a content-addressable chunk store indexed by key-ordered
trees whose structure depends only on contents, so snapshots, branches,
and schema variants share identical chunks automatically. On top sits a
snapshot graph with named branches, three-way merge, sync edges with
conditional propagation, online schema evolution, and select/project
views maintained incrementally.
"""

from .changes import ChangeSummary, RowDelta
from .chunker import ChunkingPolicy, ChunkSpan, Entry, PolicyMode, boundaries, expected_span_stats, rolling_hash
from .database import Branch, Database, EdgeAnnotation, EdgeKind, Snapshot, SnapshotId, WriteOp
from .errors import LdbError
from .evolution import Direction, SchemaChangeOp, SyncCapability, TransformOp, classify
from .relation import AttributeGroup, Column, ColumnType, Schema, parse_schema_config
from .store import ChunkId, ChunkKind, ChunkStore, Recipe, StoredChunk, StoreStats
from .syncing import Alert, Condition, ConditionKind, Frequency, FrequencyKind, SyncDirection, SyncEdge
from .tree import Delta, Mutation, MutationOp, ProllyTree, TreeRef
from .views import Comparison, ViewDef

__all__ = [
    "Alert",
    "AttributeGroup",
    "Branch",
    "ChangeSummary",
    "ChunkId",
    "ChunkKind",
    "ChunkSpan",
    "ChunkStore",
    "ChunkingPolicy",
    "Column",
    "ColumnType",
    "Comparison",
    "Condition",
    "ConditionKind",
    "Database",
    "Delta",
    "Direction",
    "EdgeAnnotation",
    "EdgeKind",
    "Entry",
    "Frequency",
    "FrequencyKind",
    "LdbError",
    "Mutation",
    "MutationOp",
    "PolicyMode",
    "ProllyTree",
    "Recipe",
    "RowDelta",
    "Schema",
    "SchemaChangeOp",
    "Snapshot",
    "SnapshotId",
    "StoreStats",
    "StoredChunk",
    "SyncCapability",
    "SyncDirection",
    "SyncEdge",
    "TransformOp",
    "TreeRef",
    "ViewDef",
    "WriteOp",
    "boundaries",
    "classify",
    "expected_span_stats",
    "parse_schema_config",
    "rolling_hash",
]
