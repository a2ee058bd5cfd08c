"""Domain types and the physical quantities of the single-AP uplink.

Channel gains are stored as amplitudes ``h``; squared amplitudes are the
exponentially distributed power gains of a Rayleigh channel.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

PENALTY_NORMS = ("none", "pbar", "rho")


@dataclass(frozen=True)
class ScenarioConfig:
    """All scalar parameters of a scenario.

    Power quantities share one arbitrary unit (``p_bar`` is the per-user,
    per-slot budget). ``power_step`` is the quantization step of deception
    power on ``[0, rho]`` used by Q-learning; the level set is
    ``{0, step, 2*step, ...}`` with ``rho`` appended when it is not a
    multiple of the step.
    """

    n_users: int = 1
    n_channels: int = 4
    p_bar: float = 10.0
    rho: float = 5.0
    lambda_rate: float = 1.0
    pathloss_enabled: bool = False
    kappa0: float = 0.05
    beta: float = 3.0
    w1: float = 3.5
    w2: float = 1.5
    w3: float = 1.5
    # divisor applied to the w3 * sum(d^2) term: none -> 1, pbar -> p_bar, rho -> rho
    penalty_norm: str = "pbar"
    alpha: float = 0.9
    gamma: float = 0.9
    phi_eps: float = 10000.0
    eps_thr: float = 1e-4
    power_step: float = 0.2
    pi_iteration: int = 200_000
    # SRL: stage-0 Q-learning grid and schedule of (tau, step) TD refinements
    srl_q_step: float = 1.0
    srl_q_phi_eps: float = 1000.0
    td_schedule: tuple[tuple[float, float], ...] = ((2.0, 0.5), (0.5, 0.1))
    td_phi_eps: float = 1000.0
    psi_end: int = 200
    srl_max_extra_stages: int = 2
    jammer_random_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1:
            raise ConfigurationError(f"n_users must be >= 1, got {self.n_users}")
        if self.n_channels < 2:
            raise ConfigurationError(f"n_channels must be >= 2, got {self.n_channels}")
        if not (0 < self.rho <= self.p_bar):
            raise ConfigurationError(f"need 0 < rho <= p_bar, got rho={self.rho}, p_bar={self.p_bar}")
        if self.lambda_rate <= 0:
            raise ConfigurationError("lambda_rate must be positive")
        if min(self.w1, self.w2, self.w3) < 0:
            raise ConfigurationError("reward weights must be nonnegative")
        if self.penalty_norm not in PENALTY_NORMS:
            raise ConfigurationError(f"penalty_norm must be one of {PENALTY_NORMS}")
        for name in ("alpha", "gamma"):
            v = getattr(self, name)
            if not (0 <= v <= 1):
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        if self.power_step <= 0 or self.srl_q_step <= 0:
            raise ConfigurationError("power steps must be positive")
        if not (0 <= self.jammer_random_prob <= 1):
            raise ConfigurationError("jammer_random_prob must lie in [0, 1]")
        for tau, step in self.td_schedule:
            if tau <= 0 or step <= 0 or step > 2 * tau:
                raise ConfigurationError(f"bad TD stage (tau={tau}, step={step})")

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)

    @property
    def penalty_divisor(self) -> float:
        return {"none": 1.0, "pbar": self.p_bar, "rho": self.rho}[self.penalty_norm]

    @property
    def chi_q(self) -> int:
        return len(power_levels(self.rho, self.power_step)) - 1

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Digest of the resolved key set, stable across runs and platforms."""
        text = "\n".join(f"{k}={_format_value(v)}" for k, v in sorted(self.as_dict().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, values: dict) -> "ScenarioConfig":
        """Build from string values as read from a key=value file."""
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigurationError(f"unknown configuration key {key!r}")
            kwargs[key] = _parse_value(types[key], raw)
        return cls(**kwargs)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(":".join(_format_value(x) for x in item) if isinstance(item, tuple)
                        else _format_value(item) for item in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(type_name: str, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if type_name == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if type_name == "int":
            return int(float(raw))
        if type_name == "float":
            return float(raw)
        if type_name == "str":
            return raw
        # td_schedule: "2:0.5,0.5:0.1"
        stages = []
        for chunk in raw.split(","):
            tau, step = chunk.split(":")
            stages.append((float(tau), float(step)))
        return tuple(stages)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {raw!r} as {type_name}") from exc


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def power_levels(rho: float, step: float) -> np.ndarray:
    """Quantized deception powers ``{0, step, ...}`` capped by ``rho``."""
    n = int(np.floor(rho / step + 1e-9))
    levels = step * np.arange(n + 1)
    if rho - levels[-1] > 1e-9:
        levels = np.append(levels, rho)
    return levels


@dataclass(frozen=True)
class ChannelState:
    """Amplitude gains per (user, channel): ``h_c`` to the AP, ``h_j`` to the jammer."""

    h_c: np.ndarray
    h_j: np.ndarray
    positions: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        h_c = np.array(self.h_c, dtype=float)
        h_j = np.array(self.h_j, dtype=float)
        if h_c.ndim != 2 or h_c.shape != h_j.shape:
            raise ConfigurationError("h_c and h_j must be equal-shape (users, channels) arrays")
        if (h_c < 0).any() or (h_j < 0).any():
            raise ConfigurationError("channel amplitudes must be nonnegative")
        h_c.setflags(write=False)
        h_j.setflags(write=False)
        object.__setattr__(self, "h_c", h_c)
        object.__setattr__(self, "h_j", h_j)

    @property
    def n_users(self) -> int:
        return self.h_c.shape[0]

    @property
    def n_channels(self) -> int:
        return self.h_c.shape[1]

    @property
    def g_c(self) -> np.ndarray:
        """Power gains to the AP."""
        return self.h_c**2

    @property
    def g_j(self) -> np.ndarray:
        """Power gains to the jammer."""
        return self.h_j**2

    @classmethod
    def from_power_gains(cls, g_c, g_j) -> "ChannelState":
        return cls(np.sqrt(np.asarray(g_c, dtype=float)), np.sqrt(np.asarray(g_j, dtype=float)))

    @classmethod
    def uniform(cls, n_users: int, n_channels: int, gain: float = 1.0) -> "ChannelState":
        h = np.full((n_users, n_channels), float(gain))
        return cls(h, h.copy())

    def __eq__(self, other):
        if not isinstance(other, ChannelState):
            return NotImplemented
        return np.array_equal(self.h_c, other.h_c) and np.array_equal(self.h_j, other.h_j)

    __hash__ = None

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "channel", "h_c", "h_j"])
            for i in range(self.n_users):
                for l in range(self.n_channels):
                    w.writerow([i, l, fmt(self.h_c[i, l]), fmt(self.h_j[i, l])])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ChannelState":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ConfigurationError(f"{path}: no channel rows")
        n = max(int(r["user"]) for r in rows) + 1
        L = max(int(r["channel"]) for r in rows) + 1
        h_c = np.full((n, L), np.nan)
        h_j = np.full((n, L), np.nan)
        for r in rows:
            i, l = int(r["user"]), int(r["channel"])
            h_c[i, l] = float(r["h_c"])
            h_j[i, l] = float(r["h_j"])
        if np.isnan(h_c).any() or np.isnan(h_j).any():
            raise ConfigurationError(f"{path}: incomplete (user, channel) grid")
        return cls(h_c, h_j)


def fmt(x: float) -> str:
    """Nine significant digits, the numeric format of every CSV we write."""
    return f"{x:.9g}"


def make_rng(seed: int, run_index: int = 0, *substream: int) -> np.random.Generator:
    """Private stream for one Monte Carlo run, derived from ``(seed, run_index, *substream)``."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(run_index), *map(int, substream)])


def draw_channels(config: ScenarioConfig, rng: np.random.Generator) -> ChannelState:
    """Draw one static realization of all user-AP and user-jammer gains.

    Squared gains are Exp(lambda). With path loss enabled, the users and the
    jammer are dropped uniformly in the unit square (AP at its centre) and
    each gain is scaled by ``(kappa / kappa0) ** -beta``, with distances
    floored at ``kappa0``.
    """
    n, L = config.n_users, config.n_channels
    scale = 1.0 / config.lambda_rate
    g_c = rng.exponential(scale, size=(n, L))
    g_j = rng.exponential(scale, size=(n, L))
    positions = None
    if config.pathloss_enabled:
        positions = rng.uniform(0.0, 1.0, size=(n + 1, 2))
        users, jammer = positions[:n], positions[n]
        ap = np.array([0.5, 0.5])
        d_c = np.maximum(np.linalg.norm(users - ap, axis=1), config.kappa0)
        d_j = np.maximum(np.linalg.norm(users - jammer, axis=1), config.kappa0)
        g_c = g_c * ((d_c / config.kappa0) ** -config.beta)[:, None]
        g_j = g_j * ((d_j / config.kappa0) ** -config.beta)[:, None]
    return ChannelState(np.sqrt(g_c), np.sqrt(g_j), positions)


@dataclass(frozen=True)
class Allocation:
    """Channel choice and per-user amplitude split between victim and communication.

    ``deceive_amp`` is ``d`` (sent on the victim channel), ``comm_amp`` is
    ``d'`` (sent on the user's communication channel).
    """

    victim_channel: int
    comm_channels: tuple[int, ...]
    deceive_amp: np.ndarray
    comm_amp: np.ndarray

    def __post_init__(self):
        d = np.array(self.deceive_amp, dtype=float)
        dp = np.array(self.comm_amp, dtype=float)
        d.setflags(write=False)
        dp.setflags(write=False)
        object.__setattr__(self, "deceive_amp", d)
        object.__setattr__(self, "comm_amp", dp)
        object.__setattr__(self, "comm_channels", tuple(int(c) for c in self.comm_channels))
        if d.shape != (len(self.comm_channels),) or dp.shape != d.shape:
            raise ConfigurationError("one deceive/comm amplitude per user is required")
        if (d < 0).any() or (dp < 0).any():
            raise ConfigurationError("amplitudes must be nonnegative")

    @classmethod
    def from_powers(cls, victim: int, comm: Sequence[int], powers, p_bar: float) -> "Allocation":
        """Full-power split: ``powers`` (``d^2``) on the victim, the rest on comm."""
        p = np.clip(np.asarray(powers, dtype=float), 0.0, p_bar)
        return cls(int(victim), tuple(comm), np.sqrt(p), np.sqrt(p_bar - p))

    @property
    def n_users(self) -> int:
        return len(self.comm_channels)

    @property
    def deceive_power(self) -> np.ndarray:
        return self.deceive_amp**2

    @property
    def comm_power(self) -> np.ndarray:
        return self.comm_amp**2

    def __eq__(self, other):
        if not isinstance(other, Allocation):
            return NotImplemented
        return (self.victim_channel == other.victim_channel
                and self.comm_channels == other.comm_channels
                and np.array_equal(self.deceive_amp, other.deceive_amp)
                and np.array_equal(self.comm_amp, other.comm_amp))

    __hash__ = None

    def violations(self, config: ScenarioConfig, tol: float = 1e-9) -> list[str]:
        """Human-readable list of broken allocation invariants (empty if valid)."""
        out = []
        total = self.deceive_power + self.comm_power
        if not np.allclose(total, config.p_bar, rtol=1e-12, atol=tol):
            out.append(f"power split {total} != p_bar={config.p_bar}")
        if (self.deceive_power > config.rho + tol).any():
            out.append(f"deception power {self.deceive_power} exceeds rho={config.rho}")
        if self.victim_channel in self.comm_channels:
            out.append("victim channel is also a communication channel")
        L = config.n_channels
        if not (0 <= self.victim_channel < L) or any(not (0 <= c < L) for c in self.comm_channels):
            out.append("channel index out of range")
        return out


@dataclass(frozen=True)
class SlotOutcome:
    jammed_channel: int
    x: tuple[int, ...]
    trp_g: float
    zeta: int
    reward: float

    @property
    def success(self) -> bool:
        return self.zeta == 0


def interference_free(comm: Sequence[int], jammed: int) -> np.ndarray:
    """``x_i``: 1 iff user i's channel is neither jammed nor shared."""
    comm = np.asarray(comm)
    counts = np.bincount(comm, minlength=max(int(comm.max()), jammed) + 1)
    return ((comm != jammed) & (counts[comm] == 1)).astype(int)


def trp_at_ap(alloc: Allocation, ch: ChannelState, x: Iterable[int]) -> float:
    """Total received power at the AP over surviving communication channels."""
    x = np.asarray(list(x), dtype=float)
    idx = np.arange(alloc.n_users)
    return float(np.sum(alloc.comm_power * ch.g_c[idx, list(alloc.comm_channels)] * x))


def sensed_spectrum(alloc: Allocation, ch: ChannelState) -> np.ndarray:
    """Per-channel power the jammer senses.

    Deception signals add coherently on the victim channel; communication
    signals sharing a channel add in power.
    """
    idx = np.arange(alloc.n_users)
    comm = list(alloc.comm_channels)
    sensed = np.zeros(ch.n_channels)
    sensed[alloc.victim_channel] = float(np.dot(alloc.deceive_amp, ch.h_j[:, alloc.victim_channel])) ** 2
    np.add.at(sensed, comm, alloc.comm_power * ch.g_j[idx, comm])
    return sensed


def upsilon_top(ch: ChannelState, config: ScenarioConfig) -> float:
    """Jammer-free maximum TRP: every user on its best AP channel at full power."""
    return float(config.p_bar * ch.g_c.max(axis=1).sum())
