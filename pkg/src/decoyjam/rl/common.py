"""Reward, exploration schedule, table updates and mixed-radix state/action codes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..model import ScenarioConfig


def reward(g: float, zeta: int, d, cfg: ScenarioConfig, *, victim_penalty: bool = True) -> float:
    """Slot reward: normalized TRP, minus a missed-victim penalty, minus deception power.

    ``d`` holds the deception amplitudes. The power term is divided by
    ``cfg.penalty_divisor`` (1 for the unnormalized form).
    """
    w1, w2, w3 = cfg.weights
    spent = float(np.sum(np.square(d)))
    r = w1 * g / cfg.p_bar - w3 * spent / cfg.penalty_divisor
    if victim_penalty:
        r -= w2 * zeta
    return r


def epsilon(k: float, phi_eps: float, eps_thr: float) -> float:
    return max(math.exp(-k / phi_eps), eps_thr)


def bellman_update(q: np.ndarray, s: int, a: int, r: float, s_next: int,
                   alpha: float, gamma: float) -> float:
    """In-place Q-learning update of ``q[s, a]``; returns the new value."""
    target = r + gamma * q[s_next].max()
    q[s, a] = (1.0 - alpha) * q[s, a] + alpha * target
    return q[s, a]


def td_update(v: np.ndarray, s: int, r: float, s_next: int, alpha: float, gamma: float) -> float:
    """In-place TD(0) update of ``v[s]``; returns the new value."""
    v[s] = v[s] + alpha * (r + gamma * v[s_next] - v[s])
    return v[s]


@dataclass(frozen=True)
class CodeSpace:
    """Mixed-radix packing of states and actions.

    A state is ``(victim, comm_1..comm_N)``; with ``known_comm`` set the
    communication channels are fixed and a state is just the victim channel.
    An action appends one power-level index per user. The channel part of an
    action code is exactly the code of the state it leads to.
    """

    n_users: int
    n_channels: int
    n_levels: int
    known_comm: bool = False

    @property
    def n_states(self) -> int:
        return self.n_channels if self.known_comm else self.n_channels ** (self.n_users + 1)

    @property
    def n_power_codes(self) -> int:
        return self.n_levels ** self.n_users

    @property
    def n_actions(self) -> int:
        return self.n_states * self.n_power_codes

    def encode_state(self, victim: int, comm=()) -> int:
        code = int(victim)
        if not self.known_comm:
            for c in comm:
                code = code * self.n_channels + int(c)
        return code

    def decode_state(self, code: int) -> tuple[int, tuple[int, ...]]:
        if self.known_comm:
            return int(code), ()
        comm = []
        for _ in range(self.n_users):
            code, c = divmod(code, self.n_channels)
            comm.append(c)
        return int(code), tuple(reversed(comm))

    def encode_power(self, levels) -> int:
        code = 0
        for lv in levels:
            code = code * self.n_levels + int(lv)
        return code

    def decode_power(self, code: int) -> tuple[int, ...]:
        out = []
        for _ in range(self.n_users):
            code, lv = divmod(code, self.n_levels)
            out.append(lv)
        return tuple(reversed(out))

    def encode_action(self, victim: int, comm, levels) -> int:
        return self.encode_state(victim, comm) * self.n_power_codes + self.encode_power(levels)

    def decode_action(self, code: int) -> tuple[int, tuple[int, ...], tuple[int, ...]]:
        s, p = divmod(int(code), self.n_power_codes)
        victim, comm = self.decode_state(s)
        return victim, comm, self.decode_power(p)

    def next_state(self, action: int) -> int:
        return int(action) // self.n_power_codes

    def random_action(self, rng: np.random.Generator, victims=None) -> int:
        """Exploratory joint action.

        The stream owner draws the victim channel (from ``victims`` if given)
        and announces it; every user then draws its own communication channel
        among the other channels and its own power level.
        """
        if victims is None:
            victim = int(rng.integers(self.n_channels))
        else:
            victim = int(victims[rng.integers(len(victims))])
        comm = ()
        if not self.known_comm:
            draws = rng.integers(self.n_channels - 1, size=self.n_users)
            comm = tuple(int(c) + (c >= victim) for c in draws)
        levels = rng.integers(self.n_levels, size=self.n_users)
        return self.encode_action(victim, comm, levels)

    def valid_actions(self, fixed_comm=None) -> np.ndarray:
        """Mask of actions whose victim channel is not also a communication channel."""
        ok = np.empty(self.n_states, dtype=bool)
        for s in range(self.n_states):
            victim, comm = self.decode_state(s)
            ok[s] = victim not in (fixed_comm if self.known_comm else comm)
        return np.repeat(ok, self.n_power_codes)


def select_action(q: np.ndarray, s: int, eps: float, rng: np.random.Generator, space: CodeSpace,
                  valid: np.ndarray | None = None, victims=None) -> int:
    """Epsilon-greedy over one Q row, ties to the lowest action index.

    One uniform draw from the shared stream decides explore vs. exploit, so
    every replica fed the same stream makes the same decision. ``valid``
    masks actions the greedy branch may pick.
    """
    if rng.random() <= eps:
        return space.random_action(rng, victims)
    row = q[s] if valid is None else np.where(valid, q[s], -np.inf)
    return int(np.argmax(row))
