import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muxstream.errors import ConfigError, ContractError, InputError
from muxstream.kvcache import SegmentKind
from muxstream.model import (
    InputUnit,
    ModelConfig,
    build_model,
    entropy,
    forward,
    frame_features,
    greedy_next,
    softmax,
)
from oracles import argmax_scan, dense_forward


def _weights(m):
    yield m.embed
    yield m.head
    for layer in m.layers:
        yield from (layer.w_q, layer.w_k, layer.w_v, layer.w_o, layer.w_ff1, layer.w_ff2)


def test_build_is_deterministic():
    a, b = build_model(ModelConfig(seed=7)), build_model(ModelConfig(seed=7))
    for x, y in zip(_weights(a), _weights(b)):
        assert np.array_equal(x, y)


def test_seed_changes_weights():
    a, b = build_model(ModelConfig(seed=7)), build_model(ModelConfig(seed=8))
    assert any(not np.array_equal(x, y) for x, y in zip(_weights(a), _weights(b)))


def test_weights_within_init_bound():
    m = build_model(ModelConfig(d_model=16, n_heads=4))
    bound = 1 / math.sqrt(16)
    assert all(np.abs(w).max() <= bound for w in _weights(m))


@pytest.mark.parametrize(
    "kwargs, field",
    [
        (dict(n_heads=3, d_model=8), "n_heads"),
        (dict(vocab_size=3), "vocab_size"),
        (dict(bos_id=2, eos_id=2), "eos_id"),
        (dict(bos_id=64), "bos_id"),
        (dict(n_layers=0), "n_layers"),
        (dict(logit_scale=0.0), "logit_scale"),
    ],
)
def test_invalid_config_names_field(kwargs, field):
    with pytest.raises(ConfigError) as exc:
        build_model(ModelConfig(**kwargs))
    assert exc.value.field == field


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0, 0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([1000, 1000, 1000]), [1 / 3] * 3, atol=1e-12)
    np.testing.assert_allclose(softmax([0, math.log(3)]), [0.25, 0.75], atol=1e-12)
    with pytest.raises(InputError):
        softmax([])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-1e3, 1e3))
def test_softmax_shift_invariant(xs, c):
    p = softmax(xs)
    assert abs(p.sum() - 1) < 1e-9
    assert np.all(p > 0)
    np.testing.assert_allclose(softmax(np.array(xs) + c), p, atol=1e-9)


def test_entropy_examples():
    assert entropy([0, 1, 0]) == 0
    assert entropy([1 / 8] * 8) == pytest.approx(math.log(8), abs=1e-12)
    assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), abs=1e-12)
    assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.0397, abs=1e-4)
    with pytest.raises(InputError):
        entropy([0.5, 0.6])
    with pytest.raises(InputError):
        entropy([1.2, -0.2])


def test_greedy_next():
    assert greedy_next([0.1, 0.9, 0.3]) == 1
    assert greedy_next([0.5, 0.5]) == 0
    rng = np.random.default_rng(0)
    for _ in range(1000):
        v = rng.normal(size=int(rng.integers(1, 50)))
        assert greedy_next(v) == argmax_scan(v)


def _video_cache(model, n_frames, seed=0):
    cache = model.new_cache()
    seg = cache.new_segment(SegmentKind.VIDEO)
    for i in range(n_frames):
        f = frame_features(seed + i, model.config.d_model)
        forward(model, cache, [InputUnit.frame(f)], [[cache.next_position]], [seg])
    return cache


def test_single_token_self_only(model):
    cache = model.new_cache()
    seg = cache.new_segment(SegmentKind.QUERY)
    out = forward(model, cache, [InputUnit.token(5)], [[0]], [seg])
    assert out.logits.shape == (1, model.config.vocab_size)
    np.testing.assert_array_equal(out.final_attn[:, 0, :], np.ones((model.config.n_heads, 1)))
    assert len(cache) == 1


def test_forward_is_pure(model):
    outs = []
    for _ in range(2):
        cache = _video_cache(model, 3)
        seg = cache.new_segment(SegmentKind.QUERY)
        outs.append(forward(model, cache, [InputUnit.token(9), InputUnit.token(4)], [[0, 1, 2, 3], [0, 1, 2, 3, 4]], [seg] * 2))
    assert np.array_equal(outs[0].logits, outs[1].logits)
    assert np.array_equal(outs[0].final_attn, outs[1].final_attn)


def test_query_attention_over_two_frames_normalized(model):
    cache = _video_cache(model, 2)
    seg = cache.new_segment(SegmentKind.QUERY)
    out = forward(model, cache, [InputUnit.token(7)], [[0, 1, 2]], [seg])
    rows = out.final_attn[:, 0, :]
    assert rows.shape == (model.config.n_heads, 3)
    np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(np.isfinite(out.logits))


def test_forward_matches_dense_recompute(model):
    rng = np.random.default_rng(1)
    frames = [frame_features(i, 32) for i in range(4)]
    query = [int(t) for t in rng.integers(3, 64, size=5)]
    cache = _video_cache(model, 4)
    seg = cache.new_segment(SegmentKind.QUERY)
    mask = [list(range(4)) + list(range(4, 5 + j)) for j in range(5)]
    out = forward(model, cache, [InputUnit.token(t) for t in query], mask, [seg] * 5)
    vis = [{i} for i in range(4)] + [set(m) for m in mask]
    logits, attn = dense_forward(model, frames + query, vis)
    np.testing.assert_allclose(out.logits, logits[4:], atol=1e-9)
    np.testing.assert_allclose(out.final_attn, attn[:, 4:, :], atol=1e-12)


def test_permutation_of_cache_entries(model):
    """Same visible set in a different cache order gives the same logits."""
    order_a, order_b = [0, 1, 2, 3], [2, 0, 3, 1]
    results = []
    for order in (order_a, order_b):
        cache = model.new_cache()
        seg = cache.new_segment(SegmentKind.VIDEO)
        for i in order:
            forward(model, cache, [InputUnit.frame(frame_features(i, 32))], [[cache.next_position]], [seg])
        q = cache.new_segment(SegmentKind.QUERY)
        out = forward(model, cache, [InputUnit.token(11), InputUnit.token(12)], [[0, 1, 2, 3, 4], [0, 1, 2, 3, 4, 5]], [q, q])
        results.append(out.logits)
    np.testing.assert_allclose(results[0], results[1], atol=1e-9)


def test_mask_contract_errors(model):
    cache = _video_cache(model, 2)
    seg = cache.new_segment(SegmentKind.QUERY)
    with pytest.raises(ContractError):
        forward(model, cache, [InputUnit.token(3)], [[0, 99]], [seg])
    with pytest.raises(ContractError):
        forward(model, cache, [InputUnit.token(3), InputUnit.token(4)], [[2, 3], [3]], [seg, seg])
    with pytest.raises(ContractError):
        forward(model, cache, [InputUnit.token(3)], [[]], [seg])
    assert len(cache) == 2


def test_non_finite_frame_rejected(model):
    cache = model.new_cache()
    seg = cache.new_segment(SegmentKind.VIDEO)
    bad = np.zeros(32)
    bad[3] = np.nan
    with pytest.raises(InputError):
        forward(model, cache, [InputUnit.frame(bad)], [[0]], [seg])


def test_input_unit_payload_rules():
    with pytest.raises(ContractError):
        InputUnit("token")
    with pytest.raises(ContractError):
        InputUnit("frame", token_id=3)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=6), st.integers(0, 2**32))
def test_attention_rows_are_distributions(small_model, vis_bits, seed):
    cache = small_model.new_cache()
    seg = cache.new_segment(SegmentKind.VIDEO)
    for i in range(len(vis_bits)):
        forward(small_model, cache, [InputUnit.frame(frame_features(seed + i, 8))], [[cache.next_position]], [seg])
    granted = [p for p, b in enumerate(vis_bits) if b] + [len(vis_bits)]
    q = cache.new_segment(SegmentKind.QUERY)
    out = forward(small_model, cache, [InputUnit.token(5)], [granted], [q])
    rows = out.final_attn[:, 0, :]
    assert np.all(rows >= 0)
    np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-6)
    hidden = [i for i in range(len(vis_bits)) if not vis_bits[i]]
    assert np.all(rows[:, hidden] == 0)
