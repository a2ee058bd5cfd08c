"""Successive refinement: coarse Q-learning, then TD(0) stages on shrinking power grids.

Communication channels are known (each user claims its best AP channel).
Stage 0 learns the victim channel and coarse powers; each TD stage searches
additive per-user adjustments in ``[-tau, tau]`` around the committed powers
and commits the value-maximizing adjustment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..engine import Environment
from ..errors import ConfigurationError
from ..model import Allocation, ChannelState, ScenarioConfig, SlotOutcome, fmt, power_levels
from .common import epsilon
from .qlearning import QLearner, Trace


@dataclass(frozen=True)
class SrlStage:
    index: int
    offsets: np.ndarray  # powers the stage started from
    tau: float
    omega: float  # adjustment step
    adjustment: np.ndarray
    committed: np.ndarray
    slots_elapsed: int  # cumulative, at the end of the stage
    trp_ratio: float


@dataclass
class SrlResult:
    allocation: Allocation
    outcome: SlotOutcome
    greedy_ratio: float
    stages: list[SrlStage]
    slots: int
    trace: Trace = field(repr=False)

    @property
    def powers(self) -> np.ndarray:
        return self.allocation.deceive_power

    def stages_to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "slots_elapsed", "offsets", "tau", "omega", "trp_ratio"])
            for st in self.stages:
                w.writerow([st.index, st.slots_elapsed, " ".join(fmt(x) for x in st.committed),
                            fmt(st.tau), fmt(st.omega), fmt(st.trp_ratio)])


def td_chi(tau: float, step: float) -> int:
    chi = int(round(2.0 * tau / step))
    if chi < 1:
        raise ConfigurationError(f"TD stage with tau={tau}, step={step} has no adjustment steps")
    return chi


def srl_action_count(n_users: int, n_channels: int, chi_q: int, chi_td: Sequence[int]) -> list[int]:
    """Explored-space sizes: stage 0 joint actions, then TD states per stage."""
    return [n_channels * (chi_q + 1) ** n_users] + [(c + 1) ** n_users for c in chi_td]


def schedule_action_count(cfg: ScenarioConfig) -> list[int]:
    chi_q = len(power_levels(cfg.rho, cfg.srl_q_step)) - 1
    return srl_action_count(cfg.n_users, cfg.n_channels, chi_q,
                            [td_chi(tau, step) for tau, step in cfg.td_schedule])


class _TdStage:
    """One refinement stage over adjustment vectors ``-tau + j * step``."""

    def __init__(self, env: Environment, cfg: ScenarioConfig, rng, victim, comm, offsets,
                 tau: float, step: float, tag):
        self.env, self.cfg, self.rng = env, cfg, rng
        self.victim, self.comm, self.offsets = victim, comm, np.asarray(offsets, dtype=float)
        self.chi = td_chi(tau, step)
        self.adj = -tau + step * np.arange(self.chi + 1)
        self.adj[np.isclose(self.adj, 0.0, atol=1e-12)] = 0.0
        self.n = len(self.offsets)
        self.n_states = (self.chi + 1) ** self.n
        self.v = np.zeros(self.n_states)
        self.visits = np.zeros(self.n_states, dtype=np.int64)
        self.tag = tag
        zero = int(np.argmin(np.abs(self.adj)))
        self.zero_state = self.encode([zero] * self.n)

    def encode(self, digits) -> int:
        code = 0
        for d in digits:
            code = code * (self.chi + 1) + int(d)
        return code

    def decode(self, code: int) -> list[int]:
        out = []
        for _ in range(self.n):
            code, d = divmod(code, self.chi + 1)
            out.append(d)
        return out[::-1]

    def adjustment(self, s: int) -> np.ndarray:
        return self.adj[self.decode(s)]

    def powers(self, s: int) -> np.ndarray:
        return np.clip(self.offsets + self.adjustment(s), 0.0, self.cfg.rho)

    def play(self, s: int, evaluate=False) -> SlotOutcome:
        fn = self.env.evaluate if evaluate else self.env.step
        return fn(self.victim, self.comm, self.powers(s), key=(self.tag, s))

    def greedy(self) -> int:
        return int(np.argmax(self.v))

    def run(self, budget: int, tr: Trace | None, start_ratio: float):
        cfg, rng = self.cfg, self.rng
        s = self.zero_state
        best = -1
        ratio = start_ratio
        unchanged = 0
        k = 0
        while k < budget:
            out = self.play(s)
            eps = epsilon(k, cfg.td_phi_eps, cfg.eps_thr)
            explore = rng.random() <= eps
            if explore:
                s_next = self.encode(rng.integers(self.chi + 1, size=self.n))
            else:
                s_next = self.greedy()
            # bootstrap from the value-argmax state; a state's first visit takes the full target
            self.visits[s] += 1
            alpha = max(cfg.alpha, 1.0 / self.visits[s])
            target = out.reward + cfg.gamma * self.v[self.greedy()]
            self.v[s] += alpha * (target - self.v[s])
            k += 1

            g = self.greedy()
            if g == best:
                unchanged += 1
            else:
                best, unchanged = g, 0
                ratio = self.env.ratio(self.play(g, evaluate=True).trp_g)
            if tr is not None:
                tr.epsilon.append(eps)
                tr.trp.append(out.trp_g)
                tr.trp_ratio.append(self.env.ratio(out.trp_g))
                tr.zeta.append(out.zeta)
                tr.jammed.append(out.jammed_channel)
                tr.greedy_flag.append(not explore)
                tr.greedy_ratio.append(ratio)
            if unchanged >= cfg.psi_end:
                break
            s = s_next
        return self.greedy(), k, ratio


def run_algorithm2(ch: ChannelState, cfg: ScenarioConfig, rng: np.random.Generator, *,
                   max_slots: int | None = None, trace: bool = True) -> SrlResult:
    """Successive refinement on one channel realization.

    The schedule stages always run; afterwards further stages (range set to
    the previous step, same number of steps) run while the last committed
    adjustment is nonzero, at most ``srl_max_extra_stages`` of them.
    """
    limit = cfg.pi_iteration if max_slots is None else max_slots
    env = Environment(ch, cfg, rng)
    learner = QLearner(ch, cfg, rng, known_comm=True, power_step=cfg.srl_q_step,
                       phi_eps=cfg.srl_q_phi_eps, env=env)
    q = learner.run(limit, trace)
    tr = q.trace if trace else None
    victim = q.allocation.victim_channel
    comm = q.allocation.comm_channels
    offsets = q.allocation.deceive_power.copy()
    slots = q.slots
    ratio = q.greedy_ratio
    stages = [SrlStage(0, offsets.copy(), float("nan"), cfg.srl_q_step, np.zeros_like(offsets),
                       offsets.copy(), slots, ratio)]

    plan = list(cfg.td_schedule)
    extra = 0
    index = 1
    while plan and slots < limit:
        tau, step = plan.pop(0)
        stage = _TdStage(env, cfg, rng, victim, comm, offsets, tau, step, ("td", index))
        best, used, ratio = stage.run(limit - slots, tr, ratio)
        slots += used
        adjustment = stage.adjustment(best)
        committed = stage.powers(best)
        stages.append(SrlStage(index, offsets.copy(), tau, step, adjustment, committed, slots, ratio))
        offsets = committed
        index += 1
        if not plan and np.any(adjustment != 0) and extra < cfg.srl_max_extra_stages:
            extra += 1
            plan.append((step, 2.0 * step / stage.chi))

    alloc = Allocation.from_powers(victim, comm, offsets, cfg.p_bar)
    outcome = env.evaluate(victim, comm, offsets, key=("final", tuple(offsets)))
    return SrlResult(alloc, outcome, env.ratio(outcome.trp_g), stages, slots,
                     tr if tr is not None else Trace())
