from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spaced_select.errors import SpacedError
from spaced_select.memory import MemoryState, ModelParams
from spaced_select.policies import (
    DifficultyCursor,
    PolicyKind,
    PolicySpec,
    build_session_difficulty,
    build_session_random,
    build_session_select,
    truncate_by_priority,
)


def test_spec_labels_and_q_rules():
    assert PolicySpec("select", 5).q == 1.0
    assert PolicySpec("select", 5).label == "select"
    assert PolicySpec("select", 5, q=4).label == "select_q4"
    assert PolicySpec("random", 5).label == "random"
    with pytest.raises(SpacedError):
        PolicySpec("random", 5, q=2.0)
    with pytest.raises(SpacedError):
        PolicySpec("select", 0)
    with pytest.raises(SpacedError):
        PolicyKind.parse("greedy")


def test_difficulty_order_easiest_first():
    params = ModelParams("exponential", 0.3, 0.5, {"a": 2.0, "b": 0.5, "c": 0.5, "d": 1.0})
    cursor = DifficultyCursor.from_params(params)
    assert cursor.ordering == ("b", "c", "d", "a")


def test_difficulty_cursor_wraps():
    cursor = DifficultyCursor(("a", "b", "c"))
    first, cursor = build_session_difficulty(cursor, 2)
    second, cursor = build_session_difficulty(cursor, 2)
    assert first == ["a", "b"] and second == ["c", "a"] and cursor.position == 1


def test_difficulty_session_capped_by_pool():
    items, cursor = build_session_difficulty(DifficultyCursor(("a", "b")), 5)
    assert items == ["a", "b"] and cursor.position == 0


def test_cursor_validation():
    with pytest.raises(SpacedError):
        DifficultyCursor(())
    with pytest.raises(SpacedError):
        DifficultyCursor(("a", "a"))
    with pytest.raises(SpacedError):
        DifficultyCursor(("a",), 3)


def test_random_session_without_replacement(rng):
    pool = [f"i{k}" for k in range(20)]
    items = build_session_random(pool, 20, rng)
    assert sorted(items) == sorted(pool)
    with pytest.raises(SpacedError):
        build_session_random(pool, 21, rng)
    with pytest.raises(SpacedError):
        build_session_random([], 1, rng)


def test_random_session_uniform():
    rng = np.random.default_rng(0)
    pool = list("abcde")
    counts = Counter(i for _ in range(5000) for i in build_session_random(pool, 2, rng))
    # each item appears with probability 2/5; 5000 draws give sd ~ 35
    for c in counts.values():
        assert abs(c - 2000) < 200


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 10), st.integers(0, 10**6))
def test_truncation_keeps_highest_drawn(p, size, seed):
    rng = np.random.default_rng(seed)
    p = np.array(p)
    drawn = rng.random(len(p)) < 0.5
    idx = truncate_by_priority(p, drawn, size, rng)
    if drawn.any():
        assert len(idx) == min(size, drawn.sum())
        assert all(drawn[idx])
        rest = np.setdiff1d(np.flatnonzero(drawn), idx)
        if rest.size:
            assert p[idx].min() >= p[rest].max()
    else:
        assert len(idx) == 1 and p[idx[0]] == p.max()
    assert list(p[idx]) == sorted(p[idx], reverse=True)


def test_select_session_prefers_forgotten_items():
    params = ModelParams("exponential", 0.3, 0.5, {"a": 1.0, "b": 1.0, "c": 1.0})
    states = [MemoryState("a", 1, 0, 86400 * 10), MemoryState("b"), MemoryState("c")]
    rng = np.random.default_rng(0)
    items = build_session_select(states, params, PolicySpec("select", 2), 86400 * 10, rng)
    # a was just reviewed (p = 0); b and c were never seen (p = 1)
    assert sorted(items) == ["b", "c"]


def test_select_session_errors():
    params = ModelParams("exponential", 0.3, 0.5, {"a": 1.0})
    rng = np.random.default_rng(0)
    with pytest.raises(SpacedError) as exc:
        build_session_select([], params, PolicySpec("select", 2), 0, rng)
    assert exc.value.code == "EMPTY_POOL"
    with pytest.raises(SpacedError):
        build_session_select([MemoryState("a")], params, PolicySpec("random", 2), 0, rng)


def test_select_inclusion_frequency_follows_probability():
    # without truncation, each item is drawn with probability (1 - m) / sqrt(q)
    params = ModelParams("exponential", 0.3, 0.5, {"a": 1.0, "b": 0.1})
    now = 86400
    states = [MemoryState("a", 1, 0, 0), MemoryState("b", 1, 0, 0)]
    rng = np.random.default_rng(3)
    spec = PolicySpec("select", 2, q=4.0)
    trials = 4000
    hits = Counter()
    for _ in range(trials):
        hits.update(build_session_select(states, params, spec, now, rng))
    p_b = (1 - np.exp(-0.07)) / 2
    # b is returned when drawn, or as the fallback when nothing was drawn and b wins the argmax (never)
    assert abs(hits["b"] / trials - p_b) < 4 * np.sqrt(p_b * (1 - p_b) / trials)
