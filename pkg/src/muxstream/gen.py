"""Synthetic trace generation.

Traces are built against a live :class:`Simulator` so that every engineered
property (legit vs noise probe margins, the in-window alert of a PA trace) is
checked on the exact session state the replay will reproduce.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from muxstream.interrupt import threshold
from muxstream.sim import RunConfig, Simulator
from muxstream.trace import TraceEvent

KINDS = ("pa", "pt", "multiplex")
# bos probability relative to the detection threshold
LEGIT_MARGIN = 2.0
NOISE_MARGIN = 0.5
MAX_TRIES = 5000
PA_MIN_FRAMES = 16


class TraceBuilder:
    def __init__(self, config: RunConfig):
        self.config = config
        self.sim = Simulator(config)
        self.events: list[TraceEvent] = []

    def seek(self, step: int) -> None:
        if step < self.sim.step:
            raise ValueError(f"cannot add events at step {step}; builder is at step {self.sim.step}")
        while self.sim.step < step:
            self.sim.advance()

    def emit(self, ev: TraceEvent) -> None:
        self.seek(ev.step)
        self.sim.dispatch(ev)
        self.events.append(ev)

    def bos_margin(self, tokens: Sequence[int]) -> float:
        p = self.sim.session.preview_query(tokens)
        return float(p[self.config.model.bos_id] / threshold(p, self.config.beta))

    def pick_query(self, rng: np.random.Generator, label: str, lo: int = 2, hi: int = 6) -> list[int]:
        for _ in range(MAX_TRIES):
            toks = random_tokens(rng, self.config, lo, hi)
            r = self.bos_margin(toks)
            if (label == "legit" and r > LEGIT_MARGIN) or (label == "noise" and r < NOISE_MARGIN):
                return toks
        raise RuntimeError(f"no {label} query found at step {self.sim.step} after {MAX_TRIES} tries")


def random_tokens(rng: np.random.Generator, config: RunConfig, lo: int = 2, hi: int = 6) -> list[int]:
    special = {config.model.bos_id, config.model.eos_id}
    pool = [t for t in range(config.model.vocab_size) if t not in special]
    n = int(rng.integers(lo, hi + 1))
    return [pool[i] for i in rng.integers(0, len(pool), size=n)]


def _frame_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31))


def gen_pa(seed: int, size: int, config: RunConfig) -> list[TraceEvent]:
    """Identical background frames with one salient frame near the end.

    ``size`` is the frame count (at least 16). The salient frame is re-drawn
    until a replay puts every alert inside the gold window.
    """
    rng = np.random.default_rng(seed)
    size = max(size, PA_MIN_FRAMES)
    gamma = config.gamma
    query = random_tokens(rng, config, 3, 5)
    background = _frame_seed(rng)
    salient_at = max(size - (gamma + 3) - int(rng.integers(0, 3)), config.warmup + 6)
    window = (salient_at, min(salient_at + gamma + 2, size - 1))
    for _ in range(200):
        salient = _frame_seed(rng)
        events = [
            TraceEvent(0, "standing_query", tokens=query, instance="s0"),
            TraceEvent(0, "gold_alert", instance="s0", window=window),
        ]
        events += [TraceEvent(t, "frame", seed=salient if t == salient_at else background) for t in range(size)]
        sim = Simulator(config)
        sim.run(events)
        alerts = [r["step"] for r in sim.log if r["kind"] == "alert"]
        if alerts and all(window[0] <= a <= window[1] for a in alerts):
            return events
    raise RuntimeError("no salient frame produced an in-window alert")


def gen_pt(seed: int, size: int, config: RunConfig) -> list[TraceEvent]:
    """Equal numbers of legit and noise queries after a short video prefix."""
    rng = np.random.default_rng(seed)
    n = max(1, size // 2)
    labels = ["legit"] * n + ["noise"] * n
    rng.shuffle(labels)
    b = TraceBuilder(config)
    for t in range(4):
        b.emit(TraceEvent(t, "frame", seed=_frame_seed(rng)))
    t = 4
    for i, label in enumerate(labels):
        b.seek(t)
        b.emit(TraceEvent(t, "query", tokens=b.pick_query(rng, label), label=label, instance=f"q{i}"))
        t += int(rng.integers(2, 7))
    return b.events


def gen_multiplex(seed: int, size: int, config: RunConfig) -> list[TraceEvent]:
    """Legit queries arriving close enough together to interrupt each other."""
    rng = np.random.default_rng(seed)
    b = TraceBuilder(config)
    for t in range(6):
        b.emit(TraceEvent(t, "frame", seed=_frame_seed(rng)))
    t = 6
    for i in range(max(1, size)):
        b.seek(t)
        b.emit(TraceEvent(t, "query", tokens=b.pick_query(rng, "legit"), label="legit", instance=f"q{i}"))
        t += int(rng.integers(1, 10))
    return b.events


def inject_noise(events: Sequence[TraceEvent], seed: int, count: int, config: RunConfig) -> list[TraceEvent]:
    """Insert ``count`` engineered noise queries; each lands after the original events of its step."""
    rng = np.random.default_rng(seed)
    q_steps = [ev.step for ev in events if ev.type == "query"] or [0]
    last = max((ev.step for ev in events), default=0)
    steps = sorted(int(s) for s in rng.integers(min(q_steps), last + 6, size=count))
    noise_at: dict[int, int] = {}
    for s in steps:
        noise_at[s] = noise_at.get(s, 0) + 1
    b = TraceBuilder(config)
    originals = list(events)
    i = 0
    k = 0
    for step in sorted(set(ev.step for ev in originals) | set(noise_at)):
        while i < len(originals) and originals[i].step == step:
            b.emit(originals[i])
            i += 1
        for _ in range(noise_at.get(step, 0)):
            b.seek(step)
            b.emit(TraceEvent(step, "query", tokens=b.pick_query(rng, "noise"), label="noise", instance=f"n{k}"))
            k += 1
    return b.events


def gen_trace(kind: str, seed: int, size: int, config: RunConfig | None = None) -> list[TraceEvent]:
    config = config or RunConfig()
    if kind == "pa":
        return gen_pa(seed, size, config)
    if kind == "pt":
        return gen_pt(seed, size, config)
    if kind == "multiplex":
        return gen_multiplex(seed, size, config)
    raise ValueError(f"unknown trace kind {kind!r}; expected one of {KINDS}")


def strip_noise(events: Iterable[TraceEvent]) -> list[TraceEvent]:
    return [ev for ev in events if not (ev.type == "query" and ev.label == "noise")]
