"""Proactive-alerting and turn-taking scores over decision logs.

Steps are discrete and windows are inclusive, so ``[a, b]`` covers ``b - a + 1``
steps. Precision and IoU are 0 when there are no alerts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from muxstream.errors import ContractError

ALERT, RESPOND, SILENT, REJECT = "alert", "respond", "silent", "reject"
ENTRY_KINDS = (ALERT, RESPOND, SILENT, REJECT)


@dataclass(frozen=True)
class GoldWindow:
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ContractError(f"gold window start {self.start} after end {self.end}")

    def __contains__(self, step: int) -> bool:
        return self.start <= step <= self.end


@dataclass(frozen=True)
class DecisionLogEntry:
    step: int
    kind: str
    subject: str
    payload: tuple = ()

    def __post_init__(self):
        if self.kind not in ENTRY_KINDS:
            raise ContractError(f"unknown decision kind {self.kind!r}")


def _alert_steps(log: Iterable[DecisionLogEntry]) -> list[int]:
    return [e.step for e in log if e.kind == ALERT]


def _span_len(a: int, b: int) -> int:
    return max(0, b - a + 1)


def pa_hit(log: Sequence[DecisionLogEntry], gold: GoldWindow) -> bool:
    steps = _alert_steps(log)
    return bool(steps) and min(steps) in gold


def pa_accuracy(logs: Mapping[str, Sequence[DecisionLogEntry]], gold: Mapping[str, GoldWindow]) -> float:
    """Fraction of instances whose first alert lands inside the gold window."""
    missing = set(logs) - set(gold)
    if missing:
        raise ContractError(f"instances without a gold window: {sorted(missing)}")
    if not gold:
        return 0.0
    return sum(pa_hit(logs.get(k, ()), g) for k, g in gold.items()) / len(gold)


def alert_precision(log: Sequence[DecisionLogEntry], gold: GoldWindow) -> float:
    steps = _alert_steps(log)
    if not steps:
        return 0.0
    return sum(s in gold for s in steps) / len(steps)


def span_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = _span_len(max(a[0], b[0]), min(a[1], b[1]))
    union = _span_len(*a) + _span_len(*b) - inter
    return inter / union


def alert_iou(log: Sequence[DecisionLogEntry], gold: GoldWindow) -> float:
    """IoU between the span [first alert, last alert] and the gold window."""
    steps = _alert_steps(log)
    if not steps:
        return 0.0
    return span_iou((min(steps), max(steps)), (gold.start, gold.end))


@dataclass(frozen=True)
class TurnTakingScores:
    pt_accuracy: float
    legit_response_rate: float
    n_noise: int
    n_legit: int


def pt_accuracy(log: Sequence[DecisionLogEntry], labels: Mapping[str, str]) -> TurnTakingScores:
    """Noise queries score when rejected without any response.

    ``labels`` maps query instance id to ``"noise"`` or ``"legit"``. The
    companion rate is the fraction of legit queries that got a response.
    """
    outcomes: dict[str, set[str]] = {}
    for e in log:
        if e.kind in (RESPOND, SILENT, REJECT):
            outcomes.setdefault(e.subject, set()).add(e.kind)
    unmatched = [k for k in labels if k not in outcomes]
    if unmatched:
        raise ContractError(f"query instances missing from the log: {sorted(unmatched)}")
    noise = [k for k, lab in labels.items() if lab == "noise"]
    legit = [k for k, lab in labels.items() if lab == "legit"]
    correct = sum(outcomes[k] == {REJECT} for k in noise)
    answered = sum(RESPOND in outcomes[k] for k in legit)
    return TurnTakingScores(
        pt_accuracy=correct / len(noise) if noise else 0.0,
        legit_response_rate=answered / len(legit) if legit else 0.0,
        n_noise=len(noise),
        n_legit=len(legit),
    )
