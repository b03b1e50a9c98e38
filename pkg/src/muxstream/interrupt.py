"""Start/stop detection from a single next-token distribution.

A special token counts as predicted when its probability strictly exceeds
``beta * exp(-H(p))``, i.e. beta times the reciprocal perplexity of ``p``.
Flatter distributions therefore lower the bar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from muxstream.errors import ConfigError
from muxstream.model import entropy


@dataclass(frozen=True)
class InterruptParams:
    beta: float = 0.2
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ConfigError("beta", f"must be positive, got {self.beta!r}")
        if self.bos_id == self.eos_id:
            raise ConfigError("eos_id", "must differ from bos_id")


def threshold(probs, beta: float) -> float:
    return beta * math.exp(-entropy(probs))


def _detect(probs, token_id: int, beta: float) -> bool:
    probs = np.asarray(probs, dtype=np.float64)
    return bool(probs[token_id] > threshold(probs, beta))


def start_detect(probs, params: InterruptParams) -> bool:
    """True if the query should be answered, False if it is noise."""
    return _detect(probs, params.bos_id, params.beta)


def stop_detect(probs, params: InterruptParams) -> bool:
    """True if the ongoing generation should halt."""
    return _detect(probs, params.eos_id, params.beta)
