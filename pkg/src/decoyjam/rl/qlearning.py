"""Tabular Q-learning of victim channel, communication channels and deception powers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..engine import Environment
from ..model import Allocation, ChannelState, ScenarioConfig, SlotOutcome, fmt, power_levels
from ..oracle import claim_channels
from .common import CodeSpace, bellman_update, epsilon


@dataclass
class Trace:
    """Per-slot learning trace; ``greedy_ratio`` is the TRP ratio of the current learned allocation."""

    epsilon: list[float] = field(default_factory=list)
    trp: list[float] = field(default_factory=list)
    trp_ratio: list[float] = field(default_factory=list)
    zeta: list[int] = field(default_factory=list)
    jammed: list[int] = field(default_factory=list)
    greedy_flag: list[bool] = field(default_factory=list)
    greedy_ratio: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.trp)

    def extend(self, other: "Trace") -> None:
        for name in self.__dataclass_fields__:
            getattr(self, name).extend(getattr(other, name))

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "epsilon", "trp", "trp_ratio", "zeta", "jammed_channel", "greedy_flag",
                        "greedy_ratio"])
            rows = zip(self.epsilon, self.trp, self.trp_ratio, self.zeta, self.jammed, self.greedy_flag,
                       self.greedy_ratio)
            for t, (e, g, r, z, j, gf, gr) in enumerate(rows):
                w.writerow([t, fmt(e), fmt(g), fmt(r), z, j, int(gf), fmt(gr)])


class _RowArgmax:
    """Per-row argmax of a Q table restricted to ``allowed`` entries.

    Kept current under single-entry updates; ties resolve to the lowest
    action index, as with ``np.argmax``. ``allowed`` is a per-action mask
    shared by all rows or a full per-entry mask.
    """

    def __init__(self, q: np.ndarray, allowed: np.ndarray):
        self.q = q
        self.allowed = allowed
        masked = np.where(allowed, q, -np.inf)
        self.arg = masked.argmax(axis=1)
        self.val = masked[np.arange(q.shape[0]), self.arg]

    def _row_mask(self, s):
        return self.allowed if self.allowed.ndim == 1 else self.allowed[s]

    def update(self, s: int, a: int) -> None:
        v = self.q[s, a]
        best = self.arg[s]
        if v > self.val[s] or (v == self.val[s] and a < best):
            self.arg[s], self.val[s] = a, v
        elif a == best and v < self.val[s]:
            self.arg[s] = int(np.argmax(np.where(self._row_mask(s), self.q[s], -np.inf)))
            self.val[s] = self.q[s, self.arg[s]]

    def best(self) -> tuple[int, int]:
        s = int(np.argmax(self.val))
        return s, int(self.arg[s])


@dataclass
class QLearningResult:
    q: np.ndarray
    space: CodeSpace
    levels: np.ndarray
    fixed_comm: tuple[int, ...] | None
    greedy_action: int
    allocation: Allocation
    outcome: SlotOutcome
    greedy_ratio: float
    slots: int
    converged: bool
    trace: Trace


class QLearner:
    """Algorithm state for one run on one channel realization.

    With ``known_comm`` every user's communication channel is fixed in
    advance (users claim their best AP channel in index order) and only the
    victim channel and powers are learned.
    """

    def __init__(self, ch: ChannelState, cfg: ScenarioConfig, rng: np.random.Generator, *,
                 known_comm: bool = False, power_step: float | None = None,
                 phi_eps: float | None = None, env: Environment | None = None):
        self.ch, self.cfg, self.rng = ch, cfg, rng
        self.levels = power_levels(cfg.rho, power_step or cfg.power_step)
        self.space = CodeSpace(ch.n_users, ch.n_channels, len(self.levels), known_comm)
        self.fixed_comm = claim_channels(ch) if known_comm else None
        self.phi_eps = phi_eps or cfg.phi_eps
        self.env = env or Environment(ch, cfg, rng)
        self.q = np.zeros((self.space.n_states, self.space.n_actions))
        self.valid = self.space.valid_actions(self.fixed_comm)
        self.victims = (None if self.fixed_comm is None else
                        [l for l in range(ch.n_channels) if l not in self.fixed_comm] or None)
        self.visited = np.zeros(self.q.shape, dtype=bool)
        self.policy = _RowArgmax(self.q, self.valid)
        self.learned = _RowArgmax(self.q, self.visited)
        self.state = 0
        self.k = 0

    def decode(self, action: int):
        victim, comm, lv = self.space.decode_action(action)
        comm = self.fixed_comm if self.fixed_comm is not None else comm
        return victim, comm, self.levels[list(lv)]

    def evaluate(self, action: int) -> SlotOutcome:
        victim, comm, powers = self.decode(action)
        return self.env.evaluate(victim, comm, powers, key=("q", action))

    def greedy(self) -> int:
        """The learned allocation: the best action experienced so far."""
        return self.learned.best()[1]

    def run(self, max_slots: int | None = None, trace: bool = True) -> QLearningResult:
        cfg, space, rng, q = self.cfg, self.space, self.rng, self.q
        limit = cfg.pi_iteration if max_slots is None else min(max_slots, cfg.pi_iteration)
        tr = Trace()
        top = self.env.top
        greedy = -1
        greedy_ratio = 0.0
        unchanged = 0
        converged = False
        while self.k < limit:
            eps = epsilon(self.k, self.phi_eps, cfg.eps_thr)
            explore = rng.random() <= eps
            a = space.random_action(rng, self.victims) if explore else int(self.policy.arg[self.state])
            victim, comm, powers = self.decode(a)
            out = self.env.step(victim, comm, powers, key=("q", a))
            s_next = space.next_state(a)
            bellman_update(q, self.state, a, out.reward, s_next, cfg.alpha, cfg.gamma)
            self.visited[self.state, a] = True
            self.policy.update(self.state, a)
            self.learned.update(self.state, a)
            self.state = s_next
            self.k += 1

            g = self.greedy()
            if g == greedy:
                unchanged += 1
            else:
                greedy, unchanged = g, 0
                greedy_ratio = self.env.ratio(self.evaluate(greedy).trp_g)
            if trace:
                tr.epsilon.append(eps)
                tr.trp.append(out.trp_g)
                tr.trp_ratio.append(out.trp_g / top if top > 0 else 0.0)
                tr.zeta.append(out.zeta)
                tr.jammed.append(out.jammed_channel)
                tr.greedy_flag.append(not explore)
                tr.greedy_ratio.append(greedy_ratio)
            if unchanged >= self.phi_eps:
                converged = True
                break

        victim, comm, powers = self.decode(greedy)
        alloc = Allocation.from_powers(victim, comm, powers, cfg.p_bar)
        return QLearningResult(q, space, self.levels, self.fixed_comm, greedy, alloc, self.evaluate(greedy),
                               greedy_ratio, self.k, converged, tr)


def run_algorithm1(ch: ChannelState, cfg: ScenarioConfig, rng: np.random.Generator, *,
                   known_comm: bool = False, power_step: float | None = None,
                   phi_eps: float | None = None, max_slots: int | None = None,
                   trace: bool = True) -> QLearningResult:
    """Learn an allocation from rewards alone; one slot per episode.

    Stops once the learned allocation (the table-wide greedy action) has not
    changed for ``phi_eps`` consecutive slots, or after ``pi_iteration`` slots.
    """
    learner = QLearner(ch, cfg, rng, known_comm=known_comm, power_step=power_step, phi_eps=phi_eps)
    return learner.run(max_slots, trace)
