"""Reactive jammer: senses every channel each slot and jams the loudest one."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class JammerState:
    n_channels: int
    current_channel: int | None = None

    def __post_init__(self):
        if self.current_channel is not None and not (0 <= self.current_channel < self.n_channels):
            raise ConfigurationError(f"jammer channel {self.current_channel} out of range")


def react(state: JammerState, sensed, random_prob: float = 0.0,
          rng: np.random.Generator | None = None) -> JammerState:
    """Return the jammer state for this slot.

    The switch is immediate: the returned channel is the one jammed in the
    same slot the powers were sensed. Ties go to the lowest channel index.
    With probability ``random_prob`` a uniformly random channel is jammed
    instead; the stream is not touched when ``random_prob`` is 0.
    """
    sensed = np.asarray(sensed, dtype=float)
    if sensed.shape != (state.n_channels,):
        raise ConfigurationError(f"sensed spectrum has {sensed.size} entries, expected {state.n_channels}")
    if random_prob > 0:
        if rng is None:
            raise ConfigurationError("a random stream is required when random_prob > 0")
        if rng.random() < random_prob:
            return JammerState(state.n_channels, int(rng.integers(state.n_channels)))
    return JammerState(state.n_channels, int(np.argmax(sensed)))
