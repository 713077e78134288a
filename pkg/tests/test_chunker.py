"""Boundary detection: golden spans, FNV oracle, partition properties."""

from __future__ import annotations

import json
import random
import struct

import pytest

from ldb.chunker import (
    ChunkingPolicy,
    Entry,
    PolicyMode,
    boundaries,
    expected_span_stats,
    rolling_hash,
)
from ldb.errors import InvalidInput

from .conftest import GOLDEN, int_key


def entries_for(keys) -> list[Entry]:
    return [Entry(k, b"") for k in keys]


def reference_fnv1a64(data: bytes) -> int:
    # Independent re-statement of FNV-1a 64 from its published constants.
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % (1 << 64)
    return h


class TestRollingHash:
    def test_deterministic(self):
        win = [b"alpha", b"beta"]
        assert rolling_hash(win) == rolling_hash(list(win))

    def test_single_key_matches_reference(self):
        key = b"k"
        expected = reference_fnv1a64(struct.pack("<I", 1) + key)
        assert rolling_hash([key]) == expected
        # frozen value, computed with the reference implementation
        assert rolling_hash([key]) == 0xD80D17AEA7DBEE7D

    def test_single_int64_key_frozen(self):
        assert rolling_hash([int_key(7)]) == 0x7BE74B626B272EB8

    def test_multi_key_matches_reference(self):
        keys = [b"a", b"bc", b"def"]
        buf = b"".join(struct.pack("<I", len(k)) + k for k in keys)
        assert rolling_hash(keys) == reference_fnv1a64(buf)

    def test_collision_scan_on_random_corpus(self):
        rng = random.Random(0xC011)
        seen = {}
        for i in range(10_000):
            win = [rng.randbytes(rng.randint(1, 12)) for _ in range(rng.randint(1, 4))]
            h = rolling_hash(win)
            canon = tuple(win)
            if h in seen:
                assert seen[h] == canon, "unexpected FNV collision"
            seen[h] = canon

    def test_one_byte_difference_changes_hash(self):
        a = [b"abcd", b"efgh"]
        b = [b"abcd", b"efgi"]
        assert rolling_hash(a) != rolling_hash(b)

    def test_empty_window_rejected(self):
        with pytest.raises(InvalidInput):
            rolling_hash([])


class TestCapacityBoundaries:
    def test_greedy_packing(self):
        policy = ChunkingPolicy(PolicyMode.CAPACITY, 4)
        spans = boundaries(entries_for([int_key(i) for i in range(10)]), policy)
        assert [(s.start, s.end) for s in spans] == [(0, 4), (4, 8), (8, 10)]

    def test_empty_input(self, capacity_policy):
        assert boundaries([], capacity_policy) == []

    def test_single_entry(self):
        policy = ChunkingPolicy(PolicyMode.CAPACITY, 4)
        spans = boundaries(entries_for([b"x"]), policy)
        assert [(s.start, s.end) for s in spans] == [(0, 1)]

    def test_insert_shifts_content_of_every_later_span(self):
        # The packing grid is positional, so an insert at position p leaves
        # span positions alone but shifts the member entries of every span
        # from the one containing p onward.
        policy = ChunkingPolicy(PolicyMode.CAPACITY, 8)
        keys = [int_key(i * 2) for i in range(100)]
        before = boundaries(entries_for(keys), policy)
        keys2 = sorted(keys + [int_key(41)])
        p = keys2.index(int_key(41))
        after = boundaries(entries_for(keys2), policy)
        assert [(s.start, s.end) for s in after[:-1]] == [(s.start, s.end) for s in before[:-1]] or \
            len(after) == len(before) + 1
        for sb, sa in zip(before, after):
            span_keys_before = keys[sb.start:sb.end]
            span_keys_after = keys2[sa.start:sa.end]
            if sb.end <= p:
                assert span_keys_before == span_keys_after
            else:
                assert span_keys_before != span_keys_after


class TestContentBoundaries:
    def test_golden_span_list(self):
        doc = json.loads((GOLDEN / "content_spans_1k.json").read_text())
        policy = ChunkingPolicy.from_json({"mode": "content", **{k: v for k, v in doc["policy"].items() if k != "mode"}})
        spans = boundaries(entries_for([int_key(i) for i in range(1000)]), policy)
        assert [[s.start, s.end] for s in spans] == doc["spans"]

    def test_golden_mean_in_sanity_band(self):
        policy = ChunkingPolicy(PolicyMode.CONTENT, 64, 4, 16, 256)
        mean, _, _ = expected_span_stats(entries_for([int_key(i) for i in range(1000)]), policy)
        assert 32 <= mean <= 128

    def test_non_increasing_keys_rejected(self, content_policy):
        with pytest.raises(InvalidInput):
            boundaries([Entry(b"b", b""), Entry(b"a", b"")], content_policy)

    def test_min_max_respected(self, content_policy):
        spans = boundaries(entries_for([int_key(i) for i in range(5000)]), content_policy)
        lens = [len(s) for s in spans]
        assert all(l <= content_policy.max_entries for l in lens)
        assert all(l >= content_policy.min_entries for l in lens[:-1])

    def test_partition_property(self, content_policy):
        n = 3000
        spans = boundaries(entries_for([int_key(i * 3) for i in range(n)]), content_policy)
        assert spans[0].start == 0 and spans[-1].end == n
        for a, b in zip(spans, spans[1:]):
            assert a.end == b.start
        assert all(len(s) > 0 for s in spans)

    def test_determinism(self, content_policy):
        keys = [int_key(i * 7) for i in range(2000)]
        assert boundaries(entries_for(keys), content_policy) == boundaries(entries_for(keys), content_policy)

    def test_locality_under_edits(self, content_policy):
        # Boundaries outside an edited region survive, up to one
        # resynchronization window past its end.
        rng = random.Random(7)
        base = sorted(rng.sample(range(10 ** 7), 6000))
        keys = [int_key(v) for v in base]
        spans_before = boundaries(entries_for(keys), content_policy)
        for trial in range(10):
            lo = rng.randrange(1000, 4000)
            hi = lo + rng.randrange(10, 300)
            gap_lo, gap_hi = base[lo - 1] + 1, base[hi]
            edited = base[:lo] + sorted(rng.sample(range(gap_lo, gap_hi), hi - lo)) + base[hi:]
            ek = [int_key(v) for v in edited]
            spans_after = boundaries(entries_for(ek), content_policy)
            resync_limit = hi + content_policy.max_entries
            stable_before = {(s.start, s.end) for s in spans_before if s.end <= lo}
            stable_after = {(s.start, s.end) for s in spans_after if s.end <= lo}
            assert stable_before == stable_after
            tail_before = [(s.start, s.end) for s in spans_before if s.start >= resync_limit]
            tail_after = [(s.start, s.end) for s in spans_after if s.start >= resync_limit]
            assert tail_before == tail_after


class TestSpanStats:
    def test_capacity_exact(self):
        policy = ChunkingPolicy(PolicyMode.CAPACITY, 10)
        mean, mx, count = expected_span_stats(entries_for([int_key(i) for i in range(100)]), policy)
        assert (mean, mx, count) == (10.0, 10, 10)

    def test_content_matches_recomputation(self, content_policy):
        entries = entries_for([int_key(i * 5) for i in range(1500)])
        mean, mx, count = expected_span_stats(entries, content_policy)
        spans = boundaries(entries, content_policy)
        lens = [len(s) for s in spans]
        assert count == len(spans)
        assert mx == max(lens)
        assert mean == pytest.approx(sum(lens) / len(lens))

    def test_calibration_brings_means_close(self, content_policy):
        entries = entries_for([int_key(i) for i in range(10_000)])
        content_mean, _, _ = expected_span_stats(entries, content_policy)
        cap = ChunkingPolicy(PolicyMode.CAPACITY, round(content_mean))
        cap_mean, _, _ = expected_span_stats(entries, cap)
        assert abs(cap_mean - content_mean) / content_mean < 0.15

    def test_empty(self, content_policy):
        assert expected_span_stats([], content_policy) == (0.0, 0, 0)


class TestPolicyValidation:
    def test_defaults(self):
        p = ChunkingPolicy(PolicyMode.CONTENT, 64)
        assert (p.min_entries, p.max_entries) == (16, 256)

    def test_bad_bounds(self):
        with pytest.raises(InvalidInput):
            ChunkingPolicy(PolicyMode.CONTENT, 8, 4, 16, 4)

    def test_roundtrip_json(self, content_policy):
        assert ChunkingPolicy.from_json(content_policy.to_json()) == content_policy
