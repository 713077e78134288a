from __future__ import annotations

from pathlib import Path

import pytest

from ldb.chunker import ChunkingPolicy, PolicyMode
from ldb.store import ChunkStore

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def store(tmp_path) -> ChunkStore:
    return ChunkStore(tmp_path / "store")


@pytest.fixture
def content_policy() -> ChunkingPolicy:
    return ChunkingPolicy(PolicyMode.CONTENT, 64, 4, 16, 256)


@pytest.fixture
def capacity_policy() -> ChunkingPolicy:
    return ChunkingPolicy(PolicyMode.CAPACITY, 64)


def int_key(v: int) -> bytes:
    return (v + (1 << 63)).to_bytes(8, "big")
