"""Training-free proactive trigger driven by final-layer attention.

Each processed frame, a standing query is probed against the cached video.
Frames whose attention exceeds ``mu + alpha * sigma`` get a hit. Hit counts
live in a max-heap, and an alert fires once the top count exceeds ``gamma``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from muxstream.errors import ConfigError, ContractError
from muxstream.kvcache import KVCache, SegmentKind
from muxstream.model import InputUnit, Model, forward

QUERY_MODES = ("last3", "mean")


@dataclass(frozen=True)
class HighlightParams:
    alpha: float = 2.0
    gamma: int = 4
    warmup_steps: int = 2
    query_mode: str = "last3"

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise ConfigError("alpha", f"must be finite, got {self.alpha!r}")
        if not isinstance(self.gamma, int) or self.gamma < 1:
            raise ConfigError("gamma", f"must be an integer >= 1, got {self.gamma!r}")
        if not isinstance(self.warmup_steps, int) or self.warmup_steps < 0:
            raise ConfigError("warmup_steps", f"must be a nonnegative integer, got {self.warmup_steps!r}")
        if self.query_mode not in QUERY_MODES:
            raise ConfigError("query_mode", f"must be one of {QUERY_MODES}, got {self.query_mode!r}")


@dataclass(frozen=True)
class Alert:
    frame_position: int
    count: int
    step: int | None = None


@dataclass
class FrameScores:
    positions: list[int]
    scores: np.ndarray
    mu: float
    sigma: float

    @classmethod
    def from_scores(cls, positions: Sequence[int], scores) -> FrameScores:
        scores = np.asarray(scores, dtype=np.float64)
        if len(positions) != len(scores) or len(scores) == 0:
            raise ContractError("frame scores need one score per position and at least one frame")
        if scores.max() == scores.min():
            # identical scores: keep sigma exactly zero so nothing clears mu
            return cls(list(positions), scores, float(scores[0]), 0.0)
        mu = math.fsum(scores) / len(scores)
        sigma = math.sqrt(math.fsum((scores - mu) ** 2) / len(scores))
        return cls(list(positions), scores, mu, sigma)


@dataclass
class HighlightState:
    """Hit counts for one standing query."""

    counts: dict[int, int] = field(default_factory=dict)
    heap: list[tuple[int, int]] = field(default_factory=list)
    frames_seen: int = 0
    fired: list[Alert] = field(default_factory=list)

    def get(self, position: int) -> int:
        return self.counts.get(position, 0)

    def update(self, position: int, count: int) -> None:
        self.counts[position] = count
        # stale entries are dropped lazily in peek()
        heapq.heappush(self.heap, (-count, position))

    def peek(self) -> tuple[int, int] | None:
        """``(position, count)`` with the highest count, lowest position on ties."""
        while self.heap:
            neg, pos = self.heap[0]
            if self.counts.get(pos) == -neg:
                return pos, -neg
            heapq.heappop(self.heap)
        return None

    def reset(self) -> None:
        self.counts.clear()
        self.heap.clear()
        self.frames_seen = 0


def query_representation(attn, mode: str = "last3") -> np.ndarray:
    """Collapse query attention ``(heads, query_tokens, frames)`` to one row over frames.

    ``last3`` averages heads and the last (up to) three query tokens; ``mean``
    averages heads and every query token.
    """
    attn = np.asarray(attn, dtype=np.float64)
    if attn.ndim != 3 or attn.shape[1] == 0:
        raise ContractError(f"expected (heads, query_tokens>=1, frames) attention, got {attn.shape}")
    if attn.shape[2] == 0:
        raise ContractError("no frame positions visible to the query")
    if mode == "last3":
        attn = attn[:, -3:]
    elif mode != "mean":
        raise ContractError(f"unknown query mode {mode!r}")
    return attn.mean(axis=(0, 1))


def gaussian_candidates(scores: FrameScores, alpha: float) -> set[int]:
    delta = scores.mu + alpha * scores.sigma
    return {p for p, s in zip(scores.positions, scores.scores) if s > delta}


def ingest_frame_scores(
    state: HighlightState, candidates: Iterable[int], params: HighlightParams, step: int | None = None
) -> Alert | None:
    for pos in sorted(candidates):
        state.update(pos, state.get(pos) + 1)
    state.frames_seen += 1
    top = state.peek()
    if top is None or top[1] <= params.gamma:
        return None
    alert = Alert(frame_position=top[0], count=top[1], step=step)
    state.fired.append(alert)
    state.reset()
    return alert


def score_frames(model: Model, cache: KVCache, query_tokens: Sequence[int], mode: str = "last3") -> FrameScores:
    """Probe ``query_tokens`` against every cached video frame; the cache is left untouched."""
    video = cache.positions_of_kind(SegmentKind.VIDEO)
    if not video:
        raise ContractError("no frame positions visible to the query")
    snap = cache.snapshot()
    try:
        seg = cache.new_segment(SegmentKind.NOISE_PROBE)
        base = cache.next_position
        mask = [video + list(range(base, base + i + 1)) for i in range(len(query_tokens))]
        out = forward(model, cache, [InputUnit.token(t) for t in query_tokens], mask, [seg] * len(query_tokens))
    finally:
        cache.restore(snap)
    rep = query_representation(out.attn_over(video), mode)
    return FrameScores.from_scores(video, rep)


def warming_up(state: HighlightState, params: HighlightParams) -> bool:
    """Consume one warm-up frame if the state is still warming up."""
    if state.frames_seen < params.warmup_steps:
        state.frames_seen += 1
        return True
    return False


def process_frame(
    model: Model,
    cache: KVCache,
    query_tokens: Sequence[int],
    state: HighlightState,
    params: HighlightParams,
    step: int | None = None,
) -> Alert | None:
    if warming_up(state, params):
        return None
    scores = score_frames(model, cache, query_tokens, params.query_mode)
    return ingest_frame_scores(state, gaussian_candidates(scores, params.alpha), params, step)
