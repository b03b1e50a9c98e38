"""Trace replay: drive a session step by step and score the outcome.

Decision-log records (one JSON object per line, keys sorted):

``alert``    ``step``, ``standing_id``, ``frame_position``, ``frame_step``
``respond``  ``step``, ``instance``, ``label``, ``stream``, ``arrival``, ``tokens``, ``reason``
``silent``   as ``respond`` for an accepted query that ended with no tokens
``reject``   ``step``, ``instance``, ``label``, ``stream``, ``arrival``
``summary``  final record: ``step`` (last step run), ``frames``, ``queries``, ``standing_queries``, ``alerts``
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from muxstream import metrics
from muxstream.highlight import HighlightParams
from muxstream.interrupt import InterruptParams
from muxstream.model import Model, ModelConfig, build_model
from muxstream.scheduler import Session, SessionParams
from muxstream.trace import TraceEvent, dumps_record, validate_trace

METRIC_KEYS = (
    "alerts",
    "frames",
    "legit_queries",
    "legit_response_rate",
    "noise_queries",
    "pa_accuracy",
    "pa_instances",
    "pa_iou",
    "pa_precision",
    "pt_accuracy",
    "rejections",
    "responses",
    "steps",
)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    alpha: float = 2.0
    beta: float = 0.2
    gamma: int = 4
    warmup: int = 2
    max_response_tokens: int = 32
    query_mode: str = "last3"
    trace_path: Path | None = None
    log_path: Path | None = None
    metrics_path: Path | None = None

    def session_params(self) -> SessionParams:
        return SessionParams(
            highlight=HighlightParams(self.alpha, self.gamma, self.warmup, self.query_mode),
            interrupt=InterruptParams(self.beta, self.model.bos_id, self.model.eos_id),
            max_response_tokens=self.max_response_tokens,
        )


class StepError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step


class Simulator:
    """Incremental trace driver; ``run`` uses it, and so do the trace generators."""

    def __init__(self, config: RunConfig, model: Model | None = None):
        self.config = config
        self.model = model or build_model(config.model)
        self.session = Session(self.model, config.session_params())
        self.log: list[dict] = []
        self.standing: dict[str, int] = {}
        self.queries: dict[int, TraceEvent] = {}
        self.gold: dict[str, tuple[int, int]] = {}
        self.frames = 0

    @property
    def step(self) -> int:
        return self.session.step_counter

    def dispatch(self, ev: TraceEvent) -> None:
        s = self.session
        if ev.type == "frame":
            self.frames += 1
            for a in s.ingest_frame(ev.frame_vector(self.model.config.d_model)):
                sid = next(k for k, v in self.standing.items() if v == a.query_id)
                self.log.append(
                    {
                        "step": a.step,
                        "kind": metrics.ALERT,
                        "standing_id": sid,
                        "frame_position": a.frame_position,
                        "frame_step": s.frame_steps[a.frame_position],
                    }
                )
        elif ev.type == "query":
            self.queries[s.submit_query(ev.tokens)] = ev
        elif ev.type == "standing_query":
            self.standing[ev.instance] = s.register_standing_query(ev.tokens)
        elif ev.type == "gold_alert":
            self.gold[ev.instance] = ev.window

    def advance(self) -> None:
        report = self.session.step()
        for sid in report.rejected + report.finished:
            st = self.session.streams[sid]
            ev = self.queries[sid]
            rec = {
                "step": report.step,
                "instance": ev.instance,
                "label": ev.label,
                "stream": sid,
                "arrival": st.arrival_step,
            }
            if sid in report.rejected:
                rec["kind"] = metrics.REJECT
            else:
                rec["kind"] = metrics.RESPOND if st.emitted_tokens else metrics.SILENT
                rec["tokens"] = list(st.emitted_tokens)
                rec["reason"] = st.finish_reason
            self.log.append(rec)

    def run(self, events: Sequence[TraceEvent]) -> None:
        by_step: dict[int, list[TraceEvent]] = defaultdict(list)
        for ev in events:
            by_step[ev.step].append(ev)
        last = max(by_step, default=-1)
        while self.step <= last or self.session.busy:
            step = self.step
            try:
                for ev in by_step.get(step, ()):
                    self.dispatch(ev)
                self.advance()
            except Exception as exc:
                raise StepError(step, exc) from exc

    def summary(self) -> dict:
        return {
            "kind": "summary",
            "step": self.step - 1,
            "frames": self.frames,
            "queries": len(self.queries),
            "standing_queries": len(self.standing),
            "alerts": sum(r["kind"] == metrics.ALERT for r in self.log),
        }

    def decision_log(self) -> list[dict]:
        return self.log + [self.summary()]

    def metrics(self) -> dict:
        return compute_metrics(self.decision_log(), self.gold, {ev.instance: ev.label for ev in self.queries.values()})


def to_entries(log: Sequence[dict]) -> list[metrics.DecisionLogEntry]:
    out = []
    for r in log:
        if r["kind"] == metrics.ALERT:
            out.append(metrics.DecisionLogEntry(r["step"], r["kind"], r["standing_id"], (r["frame_position"],)))
        elif r["kind"] in metrics.ENTRY_KINDS:
            out.append(metrics.DecisionLogEntry(r["step"], r["kind"], r["instance"], tuple(r.get("tokens", ()))))
    return out


def compute_metrics(log: Sequence[dict], gold: dict[str, tuple[int, int]], labels: dict[str, str]) -> dict:
    entries = to_entries(log)
    windows = {k: metrics.GoldWindow(*w) for k, w in gold.items()}
    per_instance = {k: [e for e in entries if e.kind == metrics.ALERT and e.subject == k] for k in windows}
    n_pa = len(windows)

    def mean(fn):
        return sum(fn(per_instance[k], w) for k, w in windows.items()) / n_pa if n_pa else 0.0

    tt = metrics.pt_accuracy(entries, labels)
    summary = log[-1] if log and log[-1].get("kind") == "summary" else {}
    return {
        "alerts": sum(e.kind == metrics.ALERT for e in entries),
        "frames": summary.get("frames", 0),
        "legit_queries": tt.n_legit,
        "legit_response_rate": tt.legit_response_rate,
        "noise_queries": tt.n_noise,
        "pa_accuracy": metrics.pa_accuracy(per_instance, windows),
        "pa_instances": n_pa,
        "pa_iou": mean(metrics.alert_iou),
        "pa_precision": mean(metrics.alert_precision),
        "pt_accuracy": tt.pt_accuracy,
        "rejections": sum(e.kind == metrics.REJECT for e in entries),
        "responses": sum(e.kind == metrics.RESPOND for e in entries),
        "steps": summary.get("step", -1) + 1,
    }


def run(events: Sequence[TraceEvent], config: RunConfig, model: Model | None = None) -> tuple[list[dict], dict]:
    """Replay ``events``; returns the decision log and the metrics document."""
    validate_trace(events, config.model.d_model, config.model.vocab_size)
    sim = Simulator(config, model)
    sim.run(events)
    return sim.decision_log(), sim.metrics()


def write_log(log: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in log:
            fh.write(dumps_record(rec) + "\n")


def write_metrics(doc: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
