"""A small, deterministic decoder-only transformer.

The model never owns a cache: ``forward`` reads and appends keys/values in a
caller-supplied :class:`~muxstream.kvcache.KVCache`, and every new input
attends to exactly the positions its mask row grants. There is no positional
encoding, so the set of visible positions (not their order or ids) fully
determines each output.

Weights are drawn uniformly from ``[-1/sqrt(d_model), 1/sqrt(d_model)]`` with a
Philox generator keyed by ``config.seed``, in this fixed order: token
embedding, then per layer ``w_q, w_k, w_v, w_o, w_ff1, w_ff2``, then the
output head.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from muxstream.errors import ConfigError, ContractError, InputError
from muxstream.kvcache import KVCache

LN_EPS = 1e-5
FF_MULT = 4


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    vocab_size: int = 64
    seed: int = 0
    bos_id: int = 1
    eos_id: int = 2
    # multiplies the output head; sharpens next-token distributions so that
    # bos/eos probabilities separate at beta=0.2 without any training
    logit_scale: float = 3.0

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def validate(self) -> None:
        for name in ("d_model", "n_layers", "n_heads"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise ConfigError("n_heads", f"{self.n_heads} does not divide d_model={self.d_model}")
        if not isinstance(self.vocab_size, int) or self.vocab_size < 4:
            raise ConfigError("vocab_size", f"must be >= 4, got {self.vocab_size!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", f"must be a 64-bit unsigned integer, got {self.seed!r}")
        for name in ("bos_id", "eos_id"):
            value = getattr(self, name)
            if not isinstance(value, int) or not 0 <= value < self.vocab_size:
                raise ConfigError(name, f"must be a token index below vocab_size, got {value!r}")
        if self.bos_id == self.eos_id:
            raise ConfigError("eos_id", "must differ from bos_id")
        if not math.isfinite(self.logit_scale) or self.logit_scale <= 0:
            raise ConfigError("logit_scale", f"must be positive and finite, got {self.logit_scale!r}")


@dataclass(frozen=True)
class LayerWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_ff1: np.ndarray
    w_ff2: np.ndarray


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    embed: np.ndarray
    layers: tuple[LayerWeights, ...]
    head: np.ndarray

    def new_cache(self) -> KVCache:
        c = self.config
        return KVCache(c.n_layers, c.n_heads, c.d_head)


class InputKind(str, enum.Enum):
    TOKEN = "token"
    FRAME = "frame"


@dataclass(frozen=True)
class InputUnit:
    kind: InputKind
    token_id: int | None = None
    features: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", InputKind(self.kind))
        if self.kind is InputKind.TOKEN and (self.token_id is None or self.features is not None):
            raise ContractError("token input needs token_id and no features")
        if self.kind is InputKind.FRAME and (self.features is None or self.token_id is not None):
            raise ContractError("frame input needs features and no token_id")

    @classmethod
    def token(cls, token_id: int) -> InputUnit:
        return cls(InputKind.TOKEN, token_id=int(token_id))

    @classmethod
    def frame(cls, features) -> InputUnit:
        return cls(InputKind.FRAME, features=np.asarray(features, dtype=np.float64))


@dataclass
class StepOutput:
    """Result of one forward call.

    ``final_attn`` has shape ``(n_heads, n_new, n_columns)`` where the columns
    are the cache positions before the call followed by the new positions,
    as listed in ``columns``. Masked-out cells are exactly zero.
    """

    logits: np.ndarray
    final_attn: np.ndarray
    columns: np.ndarray
    positions: list[int]

    def attn_over(self, positions: Sequence[int]) -> np.ndarray:
        """Final-layer attention restricted to ``positions``, shape ``(heads, n_new, len(positions))``."""
        col = {int(p): i for i, p in enumerate(self.columns)}
        try:
            idx = [col[int(p)] for p in positions]
        except KeyError as exc:
            raise ContractError(f"position {exc.args[0]} not among attention columns") from None
        return self.final_attn[:, :, idx]


def build_model(config: ModelConfig) -> Model:
    config.validate()
    rng = np.random.Generator(np.random.Philox(config.seed))
    d, v = config.d_model, config.vocab_size
    bound = 1.0 / math.sqrt(d)

    def draw(*shape):
        return rng.uniform(-bound, bound, size=shape)

    embed = draw(v, d)
    layers = tuple(
        LayerWeights(
            w_q=draw(d, d),
            w_k=draw(d, d),
            w_v=draw(d, d),
            w_o=draw(d, d),
            w_ff1=draw(d, FF_MULT * d),
            w_ff2=draw(FF_MULT * d, d),
        )
        for _ in range(config.n_layers)
    )
    head = draw(d, v)
    return Model(config, embed, layers, head)


def frame_features(seed: int, d_model: int) -> np.ndarray:
    """Deterministic frame feature vector in ``[-1, 1]^d_model`` for a trace seed."""
    return np.random.Generator(np.random.Philox(int(seed))).uniform(-1.0, 1.0, size=d_model)


def layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InputError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise InputError("softmax input must be finite")
    e = np.exp(x - x.max())
    return e / e.sum()


def entropy(p) -> float:
    """Natural-log Shannon entropy, with 0 * ln 0 taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InputError("entropy needs a nonempty vector of nonnegative finite entries")
    if abs(p.sum() - 1.0) > 1e-6:
        raise InputError(f"entropy input sums to {p.sum()!r}, not 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def greedy_next(logits) -> int:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or not np.all(np.isfinite(logits)):
        raise InputError("greedy_next needs nonempty finite logits")
    # np.argmax returns the first maximal index
    return int(np.argmax(logits))


def _embed_inputs(model: Model, inputs: Sequence[InputUnit]) -> np.ndarray:
    cfg = model.config
    rows = []
    for unit in inputs:
        if unit.kind is InputKind.TOKEN:
            if not 0 <= unit.token_id < cfg.vocab_size:
                raise InputError(f"token id {unit.token_id} outside vocabulary of {cfg.vocab_size}")
            rows.append(model.embed[unit.token_id])
        else:
            f = unit.features
            if f.shape != (cfg.d_model,):
                raise ContractError(f"frame features have shape {f.shape}, expected ({cfg.d_model},)")
            if not np.all(np.isfinite(f)):
                raise InputError("frame features must be finite")
            rows.append(f)
    return np.array(rows, dtype=np.float64).reshape(len(rows), cfg.d_model)


def _visibility(cache: KVCache, mask: Sequence[Sequence[int]], n_new: int) -> tuple[np.ndarray, np.ndarray]:
    if len(mask) != n_new:
        raise ContractError(f"mask has {len(mask)} rows for {n_new} inputs")
    n_cached = len(cache)
    columns = np.concatenate([cache.positions, cache.next_position + np.arange(n_new, dtype=np.int64)])
    visible = np.zeros((n_new, n_cached + n_new), dtype=bool)
    for i, row in enumerate(mask):
        row = sorted({int(p) for p in row})
        if not row:
            raise ContractError(f"mask row {i} grants no positions")
        own = cache.next_position + i
        cached = [p for p in row if p < cache.next_position]
        fresh = [p for p in row if p >= cache.next_position]
        if fresh and fresh[-1] > own:
            raise ContractError(f"mask row {i} grants position {fresh[-1]}, later than its own {own}")
        visible[i, cache.index_of(cached)] = True
        visible[i, [n_cached + p - cache.next_position for p in fresh]] = True
    return visible, columns


def forward(
    model: Model,
    cache: KVCache,
    inputs: Sequence[InputUnit],
    mask: Sequence[Sequence[int]],
    segments: Sequence[int],
) -> StepOutput:
    """Run the new ``inputs`` against ``cache`` and append their keys/values.

    ``mask[i]`` lists the positions input ``i`` may attend to: cached positions
    and/or new positions up to its own (new input ``i`` gets position
    ``cache.next_position + i``). ``segments[i]`` is the already-allocated
    cache segment the input's keys/values are filed under.
    """
    cfg = model.config
    n = len(inputs)
    if len(segments) != n:
        raise ContractError(f"{len(segments)} segment tags for {n} inputs")
    if n == 0:
        return StepOutput(
            np.empty((0, cfg.vocab_size)), np.empty((cfg.n_heads, 0, len(cache))), cache.positions.copy(), []
        )
    kinds = [cache.kind_of(s) for s in segments]
    visible, columns = _visibility(cache, mask, n)
    x = _embed_inputs(model, inputs)

    h, dh = cfg.n_heads, cfg.d_head
    scale = 1.0 / math.sqrt(dh)
    new_k = np.empty((n, cfg.n_layers, h, dh))
    new_v = np.empty((n, cfg.n_layers, h, dh))
    attn = None
    for li, w in enumerate(model.layers):
        xn = layer_norm(x)
        q = (xn @ w.w_q).reshape(n, h, dh)
        new_k[:, li] = (xn @ w.w_k).reshape(n, h, dh)
        new_v[:, li] = (xn @ w.w_v).reshape(n, h, dh)
        keys = np.concatenate([cache.keys[:, li], new_k[:, li]])
        vals = np.concatenate([cache.values[:, li], new_v[:, li]])
        scores = np.einsum("ihd,jhd->hij", q, keys) * scale
        scores = np.where(visible[None], scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.where(visible[None], np.exp(scores), 0.0)
        attn = e / e.sum(axis=-1, keepdims=True)
        mixed = np.einsum("hij,jhd->ihd", attn, vals).reshape(n, cfg.d_model)
        x = x + mixed @ w.w_o
        x = x + np.maximum(layer_norm(x) @ w.w_ff1, 0.0) @ w.w_ff2
    logits = (layer_norm(x) @ model.head) * cfg.logit_scale

    positions: list[int] = []
    start = 0
    for i in range(1, n + 1):
        if i == n or segments[i] != segments[start]:
            positions += cache.append(segments[start], kinds[start], new_k[start:i], new_v[start:i])
            start = i
    return StepOutput(logits, attn, columns, positions)
