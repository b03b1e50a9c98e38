"""Event traces: one JSON object per line.

Record fields by ``type``:

``frame``           ``step``, and either ``features`` (list of d_model floats) or ``seed`` (int)
``query``           ``step``, ``tokens``, ``label`` (``legit``/``noise``), ``instance``
``standing_query``  ``step``, ``tokens``, ``id``
``gold_alert``      ``step``, ``id`` (a standing query id), ``window`` ([start, end], inclusive)

Steps must be non-decreasing. Events sharing a step are dispatched in file order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from muxstream.errors import TraceValidationError
from muxstream.model import frame_features

EVENT_TYPES = ("frame", "query", "standing_query", "gold_alert")
LABELS = ("legit", "noise")


@dataclass
class TraceEvent:
    step: int
    type: str
    features: list[float] | None = None
    seed: int | None = None
    tokens: list[int] | None = None
    label: str | None = None
    instance: str | None = None
    window: tuple[int, int] | None = None
    line: int | None = field(default=None, compare=False, repr=False)

    def frame_vector(self, d_model: int) -> np.ndarray:
        if self.features is not None:
            return np.asarray(self.features, dtype=np.float64)
        return frame_features(self.seed, d_model)

    def to_record(self) -> dict:
        rec: dict = {"step": self.step, "type": self.type}
        if self.type == "frame":
            if self.seed is not None:
                rec["seed"] = self.seed
            else:
                rec["features"] = list(self.features)
        elif self.type == "query":
            rec.update(tokens=list(self.tokens), label=self.label, instance=self.instance)
        elif self.type == "standing_query":
            rec.update(tokens=list(self.tokens), id=self.instance)
        else:
            rec.update(id=self.instance, window=list(self.window))
        return rec


def _int(rec: dict, key: str, line: int, minimum: int | None = 0) -> int:
    value = rec.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or (minimum is not None and value < minimum):
        raise TraceValidationError(f"field {key!r} must be an integer >= {minimum}, got {value!r}", line)
    return value


def _tokens(rec: dict, line: int) -> list[int]:
    toks = rec.get("tokens")
    if not isinstance(toks, list) or not toks or not all(isinstance(t, int) and t >= 0 for t in toks):
        raise TraceValidationError(f"'tokens' must be a nonempty list of token ids, got {toks!r}", line)
    return toks


def _str(rec: dict, key: str, line: int) -> str:
    value = rec.get(key)
    if not isinstance(value, str) or not value:
        raise TraceValidationError(f"field {key!r} must be a nonempty string, got {value!r}", line)
    return value


def parse_record(rec: dict, line: int) -> TraceEvent:
    if not isinstance(rec, dict):
        raise TraceValidationError("record must be a JSON object", line)
    step = _int(rec, "step", line)
    kind = rec.get("type")
    if kind == "frame":
        has_f, has_s = "features" in rec, "seed" in rec
        if has_f == has_s:
            raise TraceValidationError("frame needs exactly one of 'features' or 'seed'", line)
        if has_s:
            return TraceEvent(step, kind, seed=_int(rec, "seed", line))
        feats = rec["features"]
        if not isinstance(feats, list) or not feats or not all(isinstance(x, (int, float)) for x in feats):
            raise TraceValidationError("'features' must be a nonempty list of numbers", line)
        if not np.all(np.isfinite(feats)):
            raise TraceValidationError("'features' must be finite", line)
        return TraceEvent(step, kind, features=[float(x) for x in feats])
    if kind == "query":
        label = rec.get("label")
        if label not in LABELS:
            raise TraceValidationError(f"query label must be one of {LABELS}, got {label!r}", line)
        return TraceEvent(step, kind, tokens=_tokens(rec, line), label=label, instance=_str(rec, "instance", line))
    if kind == "standing_query":
        return TraceEvent(step, kind, tokens=_tokens(rec, line), instance=_str(rec, "id", line))
    if kind == "gold_alert":
        window = rec.get("window")
        if (
            not isinstance(window, list)
            or len(window) != 2
            or not all(isinstance(w, int) and not isinstance(w, bool) for w in window)
            or window[0] > window[1]
        ):
            raise TraceValidationError(f"'window' must be [start, end] with start <= end, got {window!r}", line)
        return TraceEvent(step, kind, instance=_str(rec, "id", line), window=(window[0], window[1]))
    raise TraceValidationError(f"unknown event type {kind!r}", line)


def validate_trace(events: Sequence[TraceEvent], d_model: int | None = None, vocab_size: int | None = None) -> None:
    """Check ordering and cross-references, reporting the offending event's line."""
    standing: set[str] = set()
    queries: set[str] = set()
    gold: set[str] = set()
    for i, ev in enumerate(events):
        line = ev.line or i + 1
        if i and ev.step < events[i - 1].step:
            raise TraceValidationError(f"step {ev.step} follows step {events[i - 1].step}; steps must be sorted", line)
        if ev.type == "query":
            if ev.instance in queries:
                raise TraceValidationError(f"duplicate query instance {ev.instance!r}", line)
            queries.add(ev.instance)
        elif ev.type == "standing_query":
            if ev.instance in standing:
                raise TraceValidationError(f"duplicate standing query id {ev.instance!r}", line)
            standing.add(ev.instance)
        elif ev.type == "frame" and d_model is not None and ev.features is not None and len(ev.features) != d_model:
            raise TraceValidationError(f"frame has {len(ev.features)} features, model expects {d_model}", line)
        if vocab_size is not None and ev.tokens is not None and max(ev.tokens) >= vocab_size:
            raise TraceValidationError(f"token id {max(ev.tokens)} outside vocabulary of {vocab_size}", line)
    for i, ev in enumerate(events):
        line = ev.line or i + 1
        if ev.type != "gold_alert":
            continue
        if ev.instance not in standing:
            raise TraceValidationError(f"gold_alert references unknown standing query {ev.instance!r}", line)
        if ev.instance in gold:
            raise TraceValidationError(f"standing query {ev.instance!r} has more than one gold window", line)
        gold.add(ev.instance)


def parse_lines(lines: Iterable[str]) -> list[TraceEvent]:
    events = []
    for n, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceValidationError(f"invalid JSON: {exc.msg}", n) from None
        ev = parse_record(rec, n)
        ev.line = n
        events.append(ev)
    return events


def load_trace(path: str | Path, d_model: int | None = None, vocab_size: int | None = None) -> list[TraceEvent]:
    """Read and validate a trace; with ``d_model`` set, seeded frames are expanded to features."""
    with open(path, encoding="utf-8") as fh:
        events = parse_lines(fh)
    validate_trace(events, d_model, vocab_size)
    if d_model is not None:
        for ev in events:
            if ev.type == "frame" and ev.features is None:
                ev.features = frame_features(ev.seed, d_model).tolist()
    return events


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def dump_trace(events: Sequence[TraceEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(dumps_record(ev.to_record()) + "\n")
