"""Time-slotted simulation: apply an allocation, let the jammer react, score the slot."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError
from .jammer import JammerState, react
from .model import (Allocation, ChannelState, ScenarioConfig, SlotOutcome, fmt,
                    interference_free, sensed_spectrum, trp_at_ap, upsilon_top)
from .rl.common import reward

__all__ = ["run_slot", "Environment", "Metrics", "upsilon_top", "baseline_random_hop",
           "success_rate", "aggregate"]


def run_slot(alloc: Allocation, ch: ChannelState, jstate: JammerState, cfg: ScenarioConfig,
             rng: np.random.Generator | None = None, *,
             victim_penalty: bool = True) -> tuple[SlotOutcome, JammerState]:
    sensed = sensed_spectrum(alloc, ch)
    jstate = react(jstate, sensed, cfg.jammer_random_prob, rng)
    jammed = jstate.current_channel
    x = interference_free(alloc.comm_channels, jammed)
    g = trp_at_ap(alloc, ch, x)
    zeta = 0 if jammed == alloc.victim_channel else 1
    r = reward(g, zeta, alloc.deceive_amp, cfg, victim_penalty=victim_penalty)
    return SlotOutcome(jammed, tuple(int(v) for v in x), g, zeta, r), jstate


class Environment:
    """One trial: a fixed channel realization and the jammer that lives in it.

    With a deterministic jammer the outcome of an action never changes, so
    outcomes may be memoized by a caller-supplied key.
    """

    def __init__(self, ch: ChannelState, cfg: ScenarioConfig, rng: np.random.Generator | None = None):
        self.ch = ch
        self.cfg = cfg
        self.rng = rng
        self.jammer = JammerState(ch.n_channels)
        self.top = upsilon_top(ch, cfg)
        self._memo: dict = {}
        self.deterministic = cfg.jammer_random_prob == 0

    def step(self, victim: int, comm: Sequence[int], powers, *, key=None,
             victim_penalty: bool = True) -> SlotOutcome:
        if key is not None and self.deterministic:
            key = (key, victim_penalty)
            hit = self._memo.get(key)
            if hit is not None:
                return hit
        alloc = Allocation.from_powers(victim, comm, powers, self.cfg.p_bar)
        outcome, self.jammer = run_slot(alloc, self.ch, self.jammer, self.cfg, self.rng,
                                        victim_penalty=victim_penalty)
        if key is not None and self.deterministic:
            self._memo[key] = outcome
        return outcome

    def evaluate(self, victim: int, comm: Sequence[int], powers, *, key=None,
                 victim_penalty: bool = True) -> SlotOutcome:
        """Outcome against the argmax jammer, without touching the stream or jammer state."""
        memo_key = ("eval", key, victim_penalty)
        if key is not None:
            hit = self._memo.get(memo_key)
            if hit is not None:
                return hit
        alloc = Allocation.from_powers(victim, comm, powers, self.cfg.p_bar)
        outcome, _ = run_slot(alloc, self.ch, JammerState(self.ch.n_channels),
                              self.cfg.replace(jammer_random_prob=0.0) if not self.deterministic else self.cfg,
                              victim_penalty=victim_penalty)
        if key is not None:
            self._memo[memo_key] = outcome
        return outcome

    def ratio(self, g: float) -> float:
        return g / self.top if self.top > 0 else 0.0


@dataclass
class Metrics:
    """Per-slot series of one run."""

    trp: list[float] = field(default_factory=list)
    trp_ratio: list[float] = field(default_factory=list)
    success: list[bool] = field(default_factory=list)

    def record(self, outcome: SlotOutcome, top: float, victim: int | None) -> None:
        self.trp.append(outcome.trp_g)
        self.trp_ratio.append(outcome.trp_g / top if top > 0 else 0.0)
        self.success.append(victim is not None and outcome.jammed_channel == victim)

    def __len__(self):
        return len(self.trp)

    def success_rate(self, window: int | None = None) -> float:
        return success_rate(self.success, window or len(self.success))

    def summary(self) -> dict[str, float]:
        return {
            "slots": len(self),
            "mean_trp": float(np.mean(self.trp)) if self.trp else float("nan"),
            "mean_trp_ratio": float(np.mean(self.trp_ratio)) if self.trp else float("nan"),
            "success_rate": self.success_rate() if self.success else float("nan"),
        }

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "trp", "trp_ratio", "success"])
            for t, (g, r, s) in enumerate(zip(self.trp, self.trp_ratio, self.success)):
                w.writerow([t, fmt(g), fmt(r), int(s)])


def success_rate(series: Sequence[bool], window: int) -> float:
    """Fraction of the trailing ``window`` slots in which the victim channel was jammed."""
    if window <= 0:
        raise DomainError("success-rate window must be positive")
    if window > len(series):
        raise DomainError(f"window {window} longer than series ({len(series)})")
    tail = np.asarray(series[len(series) - window:], dtype=float)
    return float(tail.mean())


def baseline_random_hop(ch: ChannelState, cfg: ScenarioConfig, with_jammer: bool, slots: int,
                        rng: np.random.Generator) -> Metrics:
    """Every slot each user hops to a uniformly random channel at full power."""
    n, L = ch.n_users, ch.n_channels
    top = upsilon_top(ch, cfg)
    idx = np.arange(n)
    m = Metrics()
    for _ in range(slots):
        comm = rng.integers(L, size=n)
        if with_jammer:
            sensed = np.zeros(L)
            np.add.at(sensed, comm, cfg.p_bar * ch.g_j[idx, comm])
            jammed = react(JammerState(L), sensed, cfg.jammer_random_prob, rng).current_channel
        else:
            jammed = -1
        counts = np.bincount(comm, minlength=L)
        x = (comm != jammed) & (counts[comm] == 1)
        g = float(np.sum(cfg.p_bar * ch.g_c[idx, comm] * x))
        m.trp.append(g)
        m.trp_ratio.append(g / top if top > 0 else 0.0)
        m.success.append(False)
    return m


def aggregate(values: Sequence[float]) -> dict[str, float]:
    """Mean, median and standard error across independent runs (order-independent)."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    se = float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return {"n": n, "mean": float(v.mean()), "median": float(np.median(v)), "se": se}
