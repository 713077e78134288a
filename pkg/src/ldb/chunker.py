"""Boundary detection: turn an ordered entry sequence into chunk spans.

Two policies are supported. Capacity mode packs a fixed number of entries
per span, left to right. Content mode closes a span wherever a rolling hash
of the trailing key window lands on a boundary value, so span edges are a
function of key content alone: editing one region of the sequence leaves
boundaries elsewhere untouched, which is what lets chunk stores share
unchanged spans across versions.

The window restarts at each span start (the window covers the last
min(W, position-in-span) keys), so a scan restarted at any previous span
start reproduces the original boundaries exactly. Incremental tree updates
rely on this renewal property to re-chunk only the edited region.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import InvalidInput

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_M64 = (1 << 64) - 1


class PolicyMode(str, Enum):
    CAPACITY = "capacity"
    CONTENT = "content"


@dataclass(frozen=True)
class ChunkingPolicy:
    """Parameters of the boundary rule.

    ``target_entries`` is the exact fill count in capacity mode and the
    expected span length in content mode (boundary probability
    1/target_entries). ``window_w`` is the rolling-hash window; capacity
    mode ignores it. Span lengths are clamped to [min_entries, max_entries].
    """

    mode: PolicyMode
    target_entries: int
    window_w: int = 4
    min_entries: int | None = None
    max_entries: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", PolicyMode(self.mode))
        if self.target_entries < 1:
            raise InvalidInput("target_entries must be positive")
        if self.window_w < 1:
            raise InvalidInput("window_w must be >= 1")
        if self.min_entries is None:
            object.__setattr__(self, "min_entries", max(1, self.target_entries // 4))
        if self.max_entries is None:
            object.__setattr__(self, "max_entries", 4 * self.target_entries)
        if not (1 <= self.min_entries <= self.target_entries <= self.max_entries):
            raise InvalidInput("need min_entries <= target_entries <= max_entries")

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "target_entries": self.target_entries,
            "window_w": self.window_w,
            "min_entries": self.min_entries,
            "max_entries": self.max_entries,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ChunkingPolicy":
        return cls(
            mode=PolicyMode(d["mode"]),
            target_entries=d["target_entries"],
            window_w=d["window_w"],
            min_entries=d["min_entries"],
            max_entries=d["max_entries"],
        )


@dataclass(frozen=True)
class Entry:
    """One keyed record. Keys are order-preserving byte encodings; the value
    representation belongs to the leaf codec (raw bytes, typed tuples, or
    child ids at interior levels) and must be immutable and comparable."""

    key: bytes
    value: object


@dataclass(frozen=True)
class ChunkSpan:
    """Half-open [start, end) range of entry positions."""

    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start


def fnv1a64(data: bytes) -> int:
    """Reference FNV-1a over raw bytes, 64-bit."""
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _M64
    return h


def rolling_hash(window: list[bytes] | tuple[bytes, ...]) -> int:
    """Hash a window of keys: FNV-1a over each key prefixed by its u32 LE length."""
    if not window:
        raise InvalidInput("rolling_hash window must be non-empty")
    h = FNV64_OFFSET
    for key in window:
        for b in len(key).to_bytes(4, "little") + key:
            h = ((h ^ b) * FNV64_PRIME) & _M64
    return h


def _is_boundary_hash(h: int, target: int) -> bool:
    # FNV-1a's low 32 bits mix poorly on short structured windows; fold the
    # halves before reducing so the boundary rate actually is 1/target.
    return ((h ^ (h >> 32)) % target) == 0


# Window hashes repeat heavily when unchanged key runs are re-chunked, so
# memoize by window tuple. Cleared wholesale when it grows past the cap.
_WINDOW_HASH_CACHE: dict = {}
_WINDOW_CACHE_CAP = 1 << 18


def _window_hash(window: tuple[bytes, ...]) -> int:
    h = _WINDOW_HASH_CACHE.get(window)
    if h is None:
        h = FNV64_OFFSET
        for key in window:
            for b in len(key).to_bytes(4, "little") + key:
                h = ((h ^ b) * FNV64_PRIME) & _M64
        if len(_WINDOW_HASH_CACHE) >= _WINDOW_CACHE_CAP:
            _WINDOW_HASH_CACHE.clear()
        _WINDOW_HASH_CACHE[window] = h
    return h


class SpanScanner:
    """Streaming form of the boundary rule: feed keys, learn where spans close.

    ``feed`` returns True when the entry just consumed ends a span. State
    resets at every close, which is the renewal property documented above.
    """

    __slots__ = ("policy", "_len", "_window", "_target", "_min", "_max", "_w", "_capacity")

    def __init__(self, policy: ChunkingPolicy):
        self.policy = policy
        self._capacity = policy.mode is PolicyMode.CAPACITY
        self._target = policy.target_entries
        self._min = policy.min_entries
        self._max = policy.max_entries
        self._w = policy.window_w
        self._len = 0
        self._window: list[bytes] = []

    def feed(self, key: bytes) -> bool:
        self._len += 1
        if self._capacity:
            if self._len == self._target:
                self._len = 0
                return True
            return False
        win = self._window
        win.append(key)
        if len(win) > self._w:
            del win[0]
        if self._len == self._max:
            self._reset()
            return True
        if self._len >= self._min:
            if _is_boundary_hash(_window_hash(tuple(win)), self._target):
                self._reset()
                return True
        return False

    def _reset(self):
        self._len = 0
        self._window.clear()


def boundaries(entries: list[Entry], policy: ChunkingPolicy) -> list[ChunkSpan]:
    """Partition entries into contiguous, ordered, non-empty spans.

    Keys must be strictly increasing. Empty input gives an empty list.
    """
    n = len(entries)
    if n == 0:
        return []
    prev = None
    for e in entries:
        if prev is not None and e.key <= prev:
            raise InvalidInput(f"keys not strictly increasing at {e.key!r}")
        prev = e.key
    scanner = SpanScanner(policy)
    spans: list[ChunkSpan] = []
    start = 0
    for i, e in enumerate(entries):
        if scanner.feed(e.key):
            spans.append(ChunkSpan(start, i + 1))
            start = i + 1
    if start < n:
        spans.append(ChunkSpan(start, n))
    return spans


def expected_span_stats(entries: list[Entry], policy: ChunkingPolicy) -> tuple[float, int, int]:
    """(mean span length, max span length, span count) of boundaries() output.

    The harness uses this to calibrate a capacity target against the
    realized content-mode mean.
    """
    spans = boundaries(entries, policy)
    if not spans:
        return (0.0, 0, 0)
    lens = [len(s) for s in spans]
    return (sum(lens) / len(lens), max(lens), len(lens))
