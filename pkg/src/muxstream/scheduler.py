"""Streaming session: video prefix, standing queries and multiplexed query streams.

Visibility rules used for every forward call:

* a video frame sees only itself, so its keys/values depend on its features alone;
* a stream token sees every cached frame, the finished streams that were already
  in the history when its query arrived, and its own earlier tokens;
* tokens of other live streams (probing, active, suspended) are never visible.

At most one stream is active. A legit query interrupts the active stream, which
either stops (eos detected) or is suspended; suspended streams resume LIFO.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from muxstream.errors import ConfigError, ContractError, InputError
from muxstream.highlight import Alert, HighlightParams, HighlightState, process_frame
from muxstream.interrupt import InterruptParams, start_detect, stop_detect
from muxstream.kvcache import KVCache, SegmentKind
from muxstream.model import InputUnit, Model, forward, greedy_next, softmax

FRAME = None  # owner tag for video frames in build_mask


class StreamState(str, enum.Enum):
    PROBING = "probing"
    ACTIVE = "active"
    SUSPENDED = "suspended"
    FINISHED = "finished"
    REJECTED = "rejected"


LEGAL_TRANSITIONS = {
    StreamState.PROBING: {StreamState.ACTIVE, StreamState.REJECTED},
    StreamState.ACTIVE: {StreamState.SUSPENDED, StreamState.FINISHED},
    StreamState.SUSPENDED: {StreamState.ACTIVE, StreamState.FINISHED},
    StreamState.FINISHED: set(),
    StreamState.REJECTED: set(),
}


@dataclass(frozen=True)
class SessionParams:
    highlight: HighlightParams = field(default_factory=HighlightParams)
    interrupt: InterruptParams = field(default_factory=InterruptParams)
    max_response_tokens: int = 32

    def __post_init__(self):
        if not isinstance(self.max_response_tokens, int) or self.max_response_tokens < 1:
            raise ConfigError("max_response_tokens", f"must be a positive integer, got {self.max_response_tokens!r}")


@dataclass
class DecodeStream:
    stream_id: int
    segment: int
    query_tokens: list[int]
    arrival_step: int
    history: tuple[int, ...]
    state: StreamState = StreamState.PROBING
    response_segment: int | None = None
    emitted_tokens: list[int] = field(default_factory=list)
    # last emitted token, not yet fed through the model
    pending: int | None = None
    # distribution source for the next emission
    next_logits: np.ndarray | None = None
    logits_trace: list[np.ndarray] = field(default_factory=list)
    finish_reason: str | None = None
    finish_step: int | None = None
    transitions: list[tuple[int, StreamState, StreamState]] = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.state in (StreamState.FINISHED, StreamState.REJECTED)

    @property
    def segments(self) -> tuple[int, ...]:
        if self.response_segment is None:
            return (self.segment,)
        return (self.segment, self.response_segment)


@dataclass
class StandingQuery:
    query_id: int
    tokens: list[int]
    state: HighlightState = field(default_factory=HighlightState)


@dataclass(frozen=True)
class ProactiveAlert:
    query_id: int
    frame_position: int
    step: int


@dataclass
class StepReport:
    step: int
    emissions: dict[int, int] = field(default_factory=dict)
    transitions: list[tuple[int, StreamState, StreamState]] = field(default_factory=list)
    evictions: dict[int, int] = field(default_factory=dict)
    finished: list[int] = field(default_factory=list)
    rejected: list[int] = field(default_factory=list)


MaskSpec = list[list[int]]


class Session:
    def __init__(self, model: Model, params: SessionParams | None = None):
        self.model = model
        self.params = params or SessionParams()
        self.cache: KVCache = model.new_cache()
        self.video_segment = self.cache.new_segment(SegmentKind.VIDEO)
        self.streams: dict[int, DecodeStream] = {}
        self.history: list[tuple[list[int], list[int]]] = []
        self.history_ids: list[int] = []
        self.standing_queries: list[StandingQuery] = []
        self.suspended: list[int] = []
        self.active: int | None = None
        self.step_counter = 0
        self.frame_steps: dict[int, int] = {}
        # test hook: called as on_forward(session, owners, mask) before each forward
        self.on_forward: Callable[[Session, Sequence[int | None], MaskSpec], None] | None = None

    # -- inputs -----------------------------------------------------------

    def ingest_frame(self, features) -> list[ProactiveAlert]:
        f = np.asarray(features, dtype=np.float64)
        if f.shape != (self.model.config.d_model,):
            raise ContractError(f"frame width {f.shape} does not match d_model={self.model.config.d_model}")
        self._forward([InputUnit.frame(f)], [FRAME], [self.video_segment])
        self.frame_steps[self.cache.next_position - 1] = self.step_counter
        alerts = []
        hp = self.params.highlight
        for sq in self.standing_queries:
            hit = process_frame(self.model, self.cache, sq.tokens, sq.state, hp, step=self.step_counter)
            if hit is not None:
                alerts.append(ProactiveAlert(sq.query_id, hit.frame_position, self.step_counter))
        return alerts

    def submit_query(self, tokens: Sequence[int]) -> int:
        tokens = self._check_tokens(tokens)
        sid = len(self.streams)
        seg = self.cache.new_segment(SegmentKind.QUERY)
        self.streams[sid] = DecodeStream(sid, seg, tokens, self.step_counter, tuple(self.history_ids))
        return sid

    def register_standing_query(self, tokens: Sequence[int]) -> int:
        tokens = self._check_tokens(tokens)
        qid = len(self.standing_queries)
        self.standing_queries.append(StandingQuery(qid, tokens))
        return qid

    def _check_tokens(self, tokens: Sequence[int]) -> list[int]:
        tokens = [int(t) for t in tokens]
        if not tokens:
            raise InputError("query must contain at least one token")
        vocab = self.model.config.vocab_size
        if any(not 0 <= t < vocab for t in tokens):
            raise InputError(f"query tokens must lie in [0, {vocab})")
        return tokens

    # -- masks ------------------------------------------------------------

    def visible_context(self, stream: DecodeStream) -> list[int]:
        """Cached positions a stream's tokens may see, in cache order."""
        allowed = {self.video_segment, *stream.segments}
        for hid in stream.history:
            allowed.update(self.streams[hid].segments)
        return self.cache.visible_positions(lambda seg, _kind: seg in allowed)

    def build_mask(self, owners: Sequence[int | None]) -> MaskSpec:
        """Mask rows for new inputs owned by ``owners`` (stream ids, or ``FRAME``)."""
        base = self.cache.next_position
        context: dict[int, list[int]] = {}
        mask: MaskSpec = []
        for i, owner in enumerate(owners):
            if owner is FRAME:
                mask.append([base + i])
                continue
            if owner not in context:
                context[owner] = self.visible_context(self.streams[owner])
            same = [base + j for j in range(i + 1) if owners[j] == owner]
            mask.append(context[owner] + same)
        return mask

    def _forward(self, inputs, owners, segments):
        mask = self.build_mask(owners)
        if self.on_forward is not None:
            self.on_forward(self, owners, mask)
        return forward(self.model, self.cache, inputs, mask, segments)

    def preview_query(self, tokens: Sequence[int]) -> np.ndarray:
        """Next-token distribution a query submitted now would be probed with.

        Runs against a snapshot; the session is unchanged afterwards.
        """
        tokens = self._check_tokens(tokens)
        snap = self.cache.snapshot()
        try:
            seg = self.cache.new_segment(SegmentKind.QUERY)
            ghost = DecodeStream(-1, seg, tokens, self.step_counter, tuple(self.history_ids))
            base = self.cache.next_position
            ctx = self.visible_context(ghost)
            mask = [ctx + list(range(base, base + i + 1)) for i in range(len(tokens))]
            out = forward(self.model, self.cache, [InputUnit.token(t) for t in tokens], mask, [seg] * len(tokens))
        finally:
            self.cache.restore(snap)
        return softmax(out.logits[-1])

    # -- stepping ---------------------------------------------------------

    def _move(self, stream: DecodeStream, to: StreamState, report: StepReport) -> None:
        if to not in LEGAL_TRANSITIONS[stream.state]:
            raise ContractError(f"illegal transition {stream.state.value} -> {to.value} for stream {stream.stream_id}")
        rec = (stream.stream_id, stream.state, to)
        stream.transitions.append((report.step, stream.state, to))
        report.transitions.append(rec)
        stream.state = to

    def _finish(self, stream: DecodeStream, reason: str, report: StepReport) -> None:
        self._move(stream, StreamState.FINISHED, report)
        stream.finish_reason = reason
        stream.finish_step = report.step
        stream.pending = None
        stream.next_logits = None
        if self.active == stream.stream_id:
            self.active = None
        if stream.stream_id in self.suspended:
            self.suspended.remove(stream.stream_id)
        self.history.append((list(stream.query_tokens), list(stream.emitted_tokens)))
        self.history_ids.append(stream.stream_id)
        report.finished.append(stream.stream_id)

    def _activate(self, stream: DecodeStream, report: StepReport) -> None:
        if stream.response_segment is None:
            stream.response_segment = self.cache.new_segment(SegmentKind.RESPONSE)
        self._move(stream, StreamState.ACTIVE, report)
        self.active = stream.stream_id

    def step(self) -> StepReport:
        report = StepReport(self.step_counter)
        ip = self.params.interrupt
        active = self.streams[self.active] if self.active is not None else None
        probing = [s for s in self.streams.values() if s.state is StreamState.PROBING]

        inputs: list[InputUnit] = []
        owners: list[int] = []
        segments: list[int] = []
        if active is not None and active.pending is not None:
            inputs.append(InputUnit.token(active.pending))
            owners.append(active.stream_id)
            segments.append(active.response_segment)
        last_row: dict[int, int] = {}
        for s in probing:
            for t in s.query_tokens:
                inputs.append(InputUnit.token(t))
                owners.append(s.stream_id)
                segments.append(s.segment)
            last_row[s.stream_id] = len(inputs) - 1

        if inputs:
            out = self._forward(inputs, owners, segments)
            if active is not None and active.pending is not None:
                active.pending = None
                active.next_logits = out.logits[0]
                active.logits_trace.append(out.logits[0])
            for s in probing:
                s.next_logits = out.logits[last_row[s.stream_id]]
                s.logits_trace.append(s.next_logits)

        for s in probing:
            if start_detect(softmax(s.next_logits), ip):
                if self.active is not None:
                    cur = self.streams[self.active]
                    if stop_detect(softmax(cur.next_logits), ip):
                        self._finish(cur, "stop", report)
                    else:
                        self._move(cur, StreamState.SUSPENDED, report)
                        self.suspended.append(cur.stream_id)
                        self.active = None
                self._activate(s, report)
            else:
                self._move(s, StreamState.REJECTED, report)
                s.next_logits = None
                report.evictions[s.segment] = self.cache.evict_segment(s.segment)
                report.rejected.append(s.stream_id)

        if self.active is not None:
            cur = self.streams[self.active]
            tok = greedy_next(cur.next_logits)
            cur.emitted_tokens.append(tok)
            cur.next_logits = None
            report.emissions[cur.stream_id] = tok
            if tok == ip.eos_id:
                self._finish(cur, "eos", report)
            elif len(cur.emitted_tokens) >= self.params.max_response_tokens:
                self._finish(cur, "max_tokens", report)
            else:
                cur.pending = tok
            if self.active is None and self.suspended:
                self._activate(self.streams[self.suspended.pop()], report)

        self.step_counter += 1
        return report

    @property
    def busy(self) -> bool:
        """True while any stream is probing, active or suspended."""
        return any(not s.terminal for s in self.streams.values())


def open_session(model: Model, params: SessionParams | None = None) -> Session:
    return Session(model, params)
