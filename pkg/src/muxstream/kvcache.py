"""Segment-tagged key/value cache.

Entries are kept in insertion order with a unique, never-reused position id.
Every entry belongs to exactly one segment, and a segment has a single kind.
Eviction works on whole segments only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from muxstream.errors import ContractError


class SegmentKind(str, enum.Enum):
    VIDEO = "video"
    QUERY = "query"
    RESPONSE = "response"
    # scratch spans that are always rolled back or evicted
    NOISE_PROBE = "noise_probe"


SegmentFilter = Callable[[int, SegmentKind], bool]


@dataclass(frozen=True)
class CacheSnapshot:
    owner: int
    keys: np.ndarray
    values: np.ndarray
    positions: np.ndarray
    segments: np.ndarray
    next_position: int
    kinds: tuple[tuple[int, SegmentKind], ...]


class KVCache:
    """Per-layer, per-head keys and values for every cached position.

    ``keys`` and ``values`` have shape ``(entries, n_layers, n_heads, d_head)``.
    """

    def __init__(self, n_layers: int, n_heads: int, d_head: int):
        self.shape = (n_layers, n_heads, d_head)
        self.keys = np.empty((0, *self.shape))
        self.values = np.empty((0, *self.shape))
        self.positions = np.empty(0, dtype=np.int64)
        self.segments = np.empty(0, dtype=np.int64)
        self.next_position = 0
        self._kinds: dict[int, SegmentKind] = {}
        self._next_segment = 0

    def __len__(self) -> int:
        return len(self.positions)

    def new_segment(self, kind: SegmentKind) -> int:
        seg = self._next_segment
        self._next_segment += 1
        self._kinds[seg] = SegmentKind(kind)
        return seg

    def kind_of(self, segment: int) -> SegmentKind:
        return self._kinds[segment]

    def index_of(self, positions: Iterable[int]) -> np.ndarray:
        """Row indices for ``positions``; raises if any is absent."""
        pos = np.asarray(list(positions), dtype=np.int64)
        idx = np.searchsorted(self.positions, pos)
        ok = idx < len(self.positions)
        ok[ok] = self.positions[idx[ok]] == pos[ok]
        if not np.all(ok):
            missing = pos[~ok].tolist()
            raise ContractError(f"positions not in cache: {missing}")
        return idx

    def append(self, segment: int, kind: SegmentKind, keys: np.ndarray, values: np.ndarray) -> list[int]:
        kind = SegmentKind(kind)
        keys = np.asarray(keys, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if keys.ndim != 4 or keys.shape[1:] != self.shape or values.shape != keys.shape:
            raise ContractError(
                f"kv shape mismatch: got keys {keys.shape}, values {values.shape}, "
                f"expected (n, {', '.join(map(str, self.shape))})"
            )
        known = self._kinds.get(segment)
        if known is None:
            if segment >= self._next_segment:
                self._next_segment = segment + 1
            self._kinds[segment] = kind
        elif known is not kind:
            raise ContractError(f"segment {segment} is {known.value}, cannot append {kind.value}")
        n = keys.shape[0]
        new_pos = np.arange(self.next_position, self.next_position + n, dtype=np.int64)
        self.keys = np.concatenate([self.keys, keys])
        self.values = np.concatenate([self.values, values])
        self.positions = np.concatenate([self.positions, new_pos])
        self.segments = np.concatenate([self.segments, np.full(n, segment, dtype=np.int64)])
        self.next_position += n
        return new_pos.tolist()

    def evict_segment(self, segment: int) -> int:
        keep = self.segments != segment
        removed = int(len(keep) - keep.sum())
        if removed:
            self.keys = self.keys[keep]
            self.values = self.values[keep]
            self.positions = self.positions[keep]
            self.segments = self.segments[keep]
        return removed

    def snapshot(self) -> CacheSnapshot:
        return CacheSnapshot(
            owner=id(self),
            keys=self.keys.copy(),
            values=self.values.copy(),
            positions=self.positions.copy(),
            segments=self.segments.copy(),
            next_position=self.next_position,
            kinds=tuple(self._kinds.items()),
        )

    def restore(self, snap: CacheSnapshot) -> None:
        """Roll back to ``snap``.

        Segment ids handed out after the snapshot are not recycled.
        """
        if not isinstance(snap, CacheSnapshot) or snap.owner != id(self):
            raise ContractError("snapshot was not captured from this cache")
        self.keys = snap.keys.copy()
        self.values = snap.values.copy()
        self.positions = snap.positions.copy()
        self.segments = snap.segments.copy()
        self.next_position = snap.next_position
        self._kinds = dict(snap.kinds)

    def visible_positions(self, segment_filter: SegmentFilter | None = None) -> list[int]:
        if segment_filter is None:
            return self.positions.tolist()
        ok = {s: segment_filter(s, k) for s, k in self._kinds.items()}
        return [int(p) for p, s in zip(self.positions, self.segments) if ok[int(s)]]

    def positions_of(self, segment: int) -> list[int]:
        return self.positions[self.segments == segment].tolist()

    def positions_of_kind(self, kind: SegmentKind) -> list[int]:
        return self.visible_positions(lambda _s, k: k is kind)

    def live_segments(self) -> list[int]:
        return sorted({int(s) for s in self.segments})

    def content_equal(self, other: KVCache) -> bool:
        """Element-wise equality of entries, tags and the position counter."""
        return (
            self.next_position == other.next_position
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.segments, other.segments)
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.values, other.values)
            and all(self._kinds.get(int(s)) is other._kinds.get(int(s)) for s in self.segments)
        )
