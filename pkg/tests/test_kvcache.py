import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muxstream.errors import ContractError
from muxstream.kvcache import KVCache, SegmentKind
from muxstream.model import InputUnit, forward, frame_features

SHAPE = (2, 2, 3)


def kv(n, fill=0.0):
    a = np.full((n, *SHAPE), fill)
    return a, a + 1


def test_append_returns_consecutive_positions():
    c = KVCache(*SHAPE)
    s = c.new_segment(SegmentKind.VIDEO)
    assert c.append(s, SegmentKind.VIDEO, *kv(3)) == [0, 1, 2]
    assert c.next_position == 3


def test_kind_conflict_and_width_mismatch():
    c = KVCache(*SHAPE)
    q = c.new_segment(SegmentKind.QUERY)
    c.append(q, SegmentKind.QUERY, *kv(1))
    with pytest.raises(ContractError):
        c.append(q, SegmentKind.VIDEO, *kv(1))
    with pytest.raises(ContractError):
        c.append(q, SegmentKind.QUERY, np.zeros((1, 2, 2, 4)), np.zeros((1, 2, 2, 4)))


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 4)), max_size=100))
def test_random_appends(script):
    c = KVCache(*SHAPE)
    segs = [c.new_segment(SegmentKind.QUERY) for _ in range(4)]
    total = 0
    for seg, n in script:
        c.append(segs[seg], SegmentKind.QUERY, *kv(n))
        total += n
    assert len(c) == total
    assert np.all(np.diff(c.positions) > 0)


def test_evict_only_segment_then_idempotent():
    c = KVCache(*SHAPE)
    s = c.new_segment(SegmentKind.NOISE_PROBE)
    c.append(s, SegmentKind.NOISE_PROBE, *kv(4))
    assert c.evict_segment(s) == 4
    assert len(c) == 0
    assert c.evict_segment(s) == 0
    assert c.evict_segment(12345) == 0
    assert c.next_position == 4


def test_evict_preserves_survivor_order():
    c = KVCache(*SHAPE)
    a, b = c.new_segment(SegmentKind.QUERY), c.new_segment(SegmentKind.QUERY)
    pa = c.append(a, SegmentKind.QUERY, *kv(2, 1.0))
    c.append(b, SegmentKind.QUERY, *kv(3, 2.0))
    pa += c.append(a, SegmentKind.QUERY, *kv(2, 3.0))
    c.evict_segment(b)
    assert c.positions.tolist() == pa
    assert c.keys[:, 0, 0, 0].tolist() == [1.0, 1.0, 3.0, 3.0]


def test_snapshot_restore():
    c = KVCache(*SHAPE)
    s = c.new_segment(SegmentKind.VIDEO)
    c.append(s, SegmentKind.VIDEO, *kv(2))
    snap = c.snapshot()
    c.restore(snap)
    assert len(c) == 2 and c.next_position == 2
    c.append(s, SegmentKind.VIDEO, *kv(5))
    c.restore(snap)
    assert len(c) == 2 and c.next_position == 2
    with pytest.raises(ContractError):
        KVCache(*SHAPE).restore(snap)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from(["append", "evict"]), st.integers(0, 3), st.integers(1, 3)), max_size=40),
       st.integers(0, 40))
def test_restore_matches_replay(script, cut):
    """Restoring a midway snapshot equals a cache that replays only the prefix of the script."""

    def fresh():
        cache = KVCache(*SHAPE)
        for _ in range(4):
            cache.new_segment(SegmentKind.QUERY)
        return cache

    def play(cache, steps):
        for i, (op, seg, n) in enumerate(steps):
            if op == "append":
                cache.append(seg, SegmentKind.QUERY, *kv(n, float(i)))
            else:
                cache.evict_segment(seg)

    cut = min(cut, len(script))
    c = fresh()
    play(c, script[:cut])
    snap = c.snapshot()
    play(c, script[cut:])
    c.restore(snap)
    oracle = fresh()
    play(oracle, script[:cut])
    assert c.content_equal(oracle)


def test_visible_positions_filters():
    c = KVCache(*SHAPE)
    v, q = c.new_segment(SegmentKind.VIDEO), c.new_segment(SegmentKind.QUERY)
    c.append(v, SegmentKind.VIDEO, *kv(2))
    c.append(q, SegmentKind.QUERY, *kv(2))
    c.append(v, SegmentKind.VIDEO, *kv(1))
    assert c.visible_positions(lambda _s, k: k is SegmentKind.VIDEO) == [0, 1, 4]
    assert c.visible_positions() == [0, 1, 2, 3, 4]


@given(st.lists(st.integers(0, 4), max_size=30), st.integers(0, 4))
def test_visible_positions_scan_oracle(seq, target):
    c = KVCache(*SHAPE)
    segs = [c.new_segment(SegmentKind.QUERY) for _ in range(5)]
    owners = []
    for s in seq:
        c.append(segs[s], SegmentKind.QUERY, *kv(1))
        owners.append(s)
    expected = [p for p, s in enumerate(owners) if s == target]
    assert c.visible_positions(lambda seg, _k: seg == segs[target]) == expected


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 2)), min_size=1, max_size=12), st.integers(0, 1000))
def test_eviction_equals_never_inserting(small_model, script, seed):
    """Logits after an append/evict script equal logits over a replay of the survivors only."""
    m = small_model
    d = m.config.d_model
    c = m.new_cache()
    segs = [c.new_segment(SegmentKind.QUERY) for _ in range(3)]
    appended = []
    for i, (evict, s) in enumerate(script):
        if evict:
            c.evict_segment(segs[s])
            appended = [(j, seg) for j, seg in appended if seg != s]
        else:
            forward(m, c, [InputUnit.frame(frame_features(seed + i, d))], [[c.next_position]], [segs[s]])
            appended.append((i, s))
    ref = m.new_cache()
    rseg = {s: ref.new_segment(SegmentKind.QUERY) for s in range(3)}
    for i, s in appended:
        forward(m, ref, [InputUnit.frame(frame_features(seed + i, d))], [[ref.next_position]], [rseg[s]])
    qa, qb = c.new_segment(SegmentKind.QUERY), ref.new_segment(SegmentKind.QUERY)
    out_a = forward(m, c, [InputUnit.token(5)], [c.visible_positions() + [c.next_position]], [qa])
    out_b = forward(m, ref, [InputUnit.token(5)], [ref.visible_positions() + [ref.next_position]], [qb])
    assert len(c) == len(ref)
    np.testing.assert_allclose(out_a.logits, out_b.logits, atol=1e-9)
