import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decoyjam import ConfigurationError, JammerState, make_rng, react


@pytest.mark.parametrize("sensed, expected", [
    ([0.5, 3.2, 1.1], 1),
    ([2.0, 2.0, 1.0], 0),
    ([0.0, 0.0, 0.0], 0),
])
def test_argmax_examples(sensed, expected):
    assert react(JammerState(3), sensed).current_channel == expected


def test_length_mismatch():
    with pytest.raises(ConfigurationError):
        react(JammerState(4), [1.0, 2.0])


def test_random_prob_needs_stream():
    with pytest.raises(ConfigurationError):
        react(JammerState(3), [1.0, 0, 0], random_prob=0.5)


def test_random_jamming_fraction():
    rng = make_rng(1)
    state = JammerState(4)
    hits = [react(state, [0, 0, 9.0, 0], 0.2, rng).current_channel for _ in range(20000)]
    off = np.mean(np.array(hits) != 2)
    assert abs(off - 0.2 * 3 / 4) < 0.015


@given(st.lists(st.floats(0.0, 1e6), min_size=2, max_size=10))
def test_deterministic_and_idempotent(sensed):
    first = react(JammerState(len(sensed)), sensed)
    again = react(first, sensed)
    assert first == again
    assert sensed[first.current_channel] == max(sensed)


@given(st.lists(st.floats(0.0, 100.0), min_size=2, max_size=8), st.integers(0, 7))
def test_dominant_victim_is_jammed(sensed, v):
    v %= len(sensed)
    sensed = list(sensed)
    sensed[v] = max(sensed) + 1.0
    assert react(JammerState(len(sensed)), sensed).current_channel == v
