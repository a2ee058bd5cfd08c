"""Full-knowledge optimal allocations: convex program, linearized program, grid oracle.

For a fixed assignment (victim ``v``, distinct communication channels ``c_i``)
the convex program is parametrized by the coherent victim amplitude
``T = sum_i d_i h_j[i, v]``. For fixed ``T`` every user must satisfy
``(P - d_i^2) h'_i^2 <= T^2 - delta``, i.e. ``d_i >= l_i(T)``, and the
cheapest amplitudes reaching ``T`` follow a water-filling rule
``d_i = clip(nu a_i / (2 g_i), l_i(T), sqrt(rho))``. The KKT active sets
(interior, d = 0, d^2 = rho, deception equality) are exactly the clip
branches, so a one-dimensional search over ``T`` visits every critical point.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateChannelError, DomainError
from .model import Allocation, ChannelState, ScenarioConfig, fmt, power_levels, sensed_spectrum

DELTA = 1e-9  # strict-dominance slack at the jammer (power units)
CONSTRAINT_TOL = 1e-9

__all__ = ["OptimizationResult", "ModifiedSolution", "solve_full", "solve_modified",
           "sherman_morrison_check", "brute_force", "select_channels", "claim_channels", "DELTA"]


@dataclass(frozen=True)
class OptimizationResult:
    allocation: Allocation
    objective: float  # -G
    active_constraints: tuple[str, ...]
    feasible: bool
    method: str

    @property
    def trp(self) -> float:
        return -self.objective

    @property
    def powers(self) -> np.ndarray:
        return self.allocation.deceive_power

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        alloc = self.allocation
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "victim", "comm", "d2", "dprime2", "tag", "objective", "feasible", "method"])
            for i in range(alloc.n_users):
                w.writerow([i, alloc.victim_channel, alloc.comm_channels[i], fmt(alloc.deceive_power[i]),
                            fmt(alloc.comm_power[i]), self.active_constraints[i], fmt(self.objective),
                            int(self.feasible), self.method])


@dataclass(frozen=True)
class ModifiedSolution:
    """Deception powers of the linearized program.

    ``raw`` is the unconstrained linear solution; ``powers`` is after the
    box clamping to ``[0, rho]``.
    """

    powers: np.ndarray
    raw: np.ndarray
    rho: float

    @property
    def within_cap(self) -> bool:
        return bool((self.raw <= self.rho + CONSTRAINT_TOL).all())

    @property
    def clamped(self) -> bool:
        return not np.array_equal(self.powers, self.raw)


def _assignment_tags(p, a, b, p_bar, rho, tol=1e-7) -> tuple[str, ...]:
    t2 = float(np.dot(a, np.sqrt(p))) ** 2
    tags = []
    for pi, bi in zip(p, b):
        if pi <= tol:
            tags.append("zero")
        elif pi >= rho - tol:
            tags.append("cap")
        elif bi > 0 and (p_bar - pi) * bi >= t2 - DELTA - tol * max(1.0, t2):
            tags.append("deception")
        else:
            tags.append("interior")
    return tuple(tags)


# --- channel rules ---------------------------------------------------------

def select_channels(ch: ChannelState, rule: str = "app2") -> tuple[int, tuple[int, ...]]:
    """Victim and communication channels chosen from the gains.

    The victim is the channel with the largest summed user-jammer power gain.
    Users then claim communication channels in index order, each taking the
    best remaining channel: largest AP gain (``app2``) or smallest jammer
    gain (``app1``). Channels are shared only if they run out.
    """
    if rule not in ("app1", "app2"):
        raise DomainError(f"unknown channel rule {rule!r}")
    v = int(np.argmax(ch.g_j.sum(axis=0)))
    return v, _claim(ch, v, rule)


def claim_channels(ch: ChannelState, exclude: int | None = None) -> tuple[int, ...]:
    """Users in index order take their best remaining AP channel."""
    return _claim(ch, -1 if exclude is None else exclude, "app2")


def _claim(ch: ChannelState, v: int, rule: str) -> tuple[int, ...]:
    free = [l for l in range(ch.n_channels) if l != v]
    comm = []
    for i in range(ch.n_users):
        pool = free or [l for l in range(ch.n_channels) if l != v]
        if rule == "app2":
            best = max(pool, key=lambda l: (ch.g_c[i, l], -l))
        else:
            best = min(pool, key=lambda l: (ch.g_j[i, l], l))
        comm.append(best)
        if best in free:
            free.remove(best)
    return tuple(comm)


# --- linearized program ----------------------------------------------------

def solve_modified(ch: ChannelState, cfg: ScenarioConfig, victim: int,
                   comm: Sequence[int], slack: float = 0.0) -> ModifiedSolution:
    """Solve the linearized deception-equality system ``M p = P h'^2 + slack``.

    ``M = 1 w^T + diag(h'^2)`` with ``w_i = h_j[i, v]^2``. A positive
    ``slack`` makes the victim strictly louder than every communication
    channel. Users whose solution leaves ``[0, rho]`` are pinned to the
    violated bound and the reduced system is re-solved until every power is
    in range.
    """
    w, hp2 = _linear_terms(ch, victim, comm)
    if (hp2 == 0).any():
        raise DegenerateChannelError("a communication channel has zero jammer gain; the system is singular")
    n = len(w)
    M = np.outer(np.ones(n), w) + np.diag(hp2)
    rhs = cfg.p_bar * hp2 + slack
    try:
        raw = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateChannelError(str(exc)) from exc

    p = raw.copy()
    fixed = np.full(n, np.nan)
    for _ in range(n + 1):
        low, high = p < 0, p > cfg.rho
        if not (low.any() or high.any()):
            break
        fixed[low] = 0.0
        fixed[high] = cfg.rho
        free = np.isnan(fixed)
        p = fixed.copy()
        if free.any():
            f = np.flatnonzero(free)
            pinned = float(np.dot(w[~free], fixed[~free]))
            Mf = np.outer(np.ones(f.size), w[f]) + np.diag(hp2[f])
            p[f] = np.linalg.solve(Mf, rhs[f] - pinned)
    return ModifiedSolution(np.clip(p, 0.0, cfg.rho), raw, cfg.rho)


def _linear_terms(ch, victim, comm):
    idx = np.arange(ch.n_users)
    return ch.g_j[:, victim].copy(), ch.g_j[idx, list(comm)]


def sherman_morrison_check(ch: ChannelState, cfg: ScenarioConfig, victim: int,
                           comm: Sequence[int]) -> float:
    """Max deviation between the rank-one closed form and the linear solve."""
    w, hp2 = _linear_terms(ch, victim, comm)
    s = w.sum()
    closed = cfg.p_bar * (1.0 - (s / hp2) / (1.0 + np.sum(w / hp2)))
    return float(np.max(np.abs(closed - solve_modified(ch, cfg, victim, comm).raw)))


# --- convex program ---------------------------------------------------------

class _Assignment:
    """Inner problem for a fixed victim and distinct communication channels."""

    def __init__(self, a, b, c0, c1, p_bar, rho, delta=DELTA):
        self.a, self.b, self.c1 = a, b, c1
        self.c0 = c0
        self.p_bar, self.rho = p_bar, rho
        self.delta = delta
        self.cap = np.sqrt(rho)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(c1 > 0, a / (2.0 * c1), np.where(a > 0, np.inf, 0.0))
        self.coef = coef
        self.t_lo = np.sqrt(max(float(np.max((p_bar - rho) * b)), 0.0) + delta)
        self.t_hi = self.cap * float(a.sum())

    @property
    def feasible(self) -> bool:
        return self.t_hi >= self.t_lo

    def lower(self, t):
        t = np.atleast_1d(t)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            need = np.where(self.b > 0, self.p_bar - (t**2 - self.delta) / self.b, 0.0)
        return np.sqrt(np.clip(need, 0.0, None))

    def upper_bound(self) -> float:
        lo = np.minimum(self.lower(self.t_hi)[0], self.cap)
        return float(np.sum(self.c0 - self.c1 * lo**2))

    def amplitudes(self, t):
        """Cheapest amplitudes with victim amplitude at least each ``t``; NaN rows if none."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo = np.minimum(self.lower(t), self.cap)
        a, coef, cap = self.a, self.coef, self.cap
        need = t - lo @ a
        finite = np.isfinite(coef) & (coef > 0)
        nu_hi = float(np.max(cap / coef[finite])) if finite.any() else 1.0
        lo_nu = np.zeros_like(t)
        hi_nu = np.full_like(t, nu_hi * (1 + 1e-12) + 1e-300)

        def fill(nu):
            with np.errstate(invalid="ignore"):
                raw = np.where(np.isinf(coef), np.where(nu[:, None] > 0, cap, 0.0), nu[:, None] * coef)
            return np.clip(raw, lo, cap)

        active = need > 0
        for _ in range(80):
            mid = 0.5 * (lo_nu + hi_nu)
            ok = fill(mid) @ a >= t
            hi_nu = np.where(ok, mid, hi_nu)
            lo_nu = np.where(ok, lo_nu, mid)
        d = np.where(active[:, None], fill(hi_nu), lo)
        bad = (d @ a < t * (1 - 1e-15)) | (self.lower(t) > cap * (1 + 1e-15)).any(axis=1)
        d[bad] = np.nan
        return d

    def score(self, d):
        return np.sum(self.c0 - self.c1 * d**2, axis=-1)

    def solve(self, grid: int = 256, polish: bool = True):
        """Best amplitudes over ``T``: a coarse grid, then repeated zooms around the incumbent.

        Optima often sit on a kink (a user switching clip branch), where
        derivative-based line searches stall; the zoom only needs local
        unimodality. Without ``polish`` the zoom stops near 1e-7 relative,
        enough to rank assignments.
        """
        if not self.feasible:
            return None
        ts = np.linspace(self.t_lo, self.t_hi, grid)
        t = self._argmax(ts)
        if t is None:
            return None
        half = (self.t_hi - self.t_lo) / (grid - 1)
        for _ in range(9 if polish else 3):
            if half <= 1e-15 * self.t_hi:
                break
            t = self._argmax(np.linspace(max(self.t_lo, t - half), min(self.t_hi, t + half), 65), t)
            half /= 32.0
        return self.amplitudes(t)[0]

    def _argmax(self, ts, incumbent=None):
        if incumbent is not None:
            ts = np.append(ts, incumbent)
        vals = self.score(self.amplitudes(ts))
        vals = np.where(np.isnan(vals), -np.inf, vals)
        k = int(np.argmax(vals))
        return float(ts[k]) if np.isfinite(vals[k]) else incumbent


def _objective_terms(g, cfg: ScenarioConfig, objective: str):
    if objective == "trp":
        return cfg.p_bar * g, g.copy()
    if objective == "reward":
        w1, _, w3 = cfg.weights
        return w1 * g, w1 * g / cfg.p_bar + w3 / cfg.penalty_divisor
    raise DomainError(f"unknown objective {objective!r}")


def _assignments(n_users: int, n_channels: int, victim=None, comm=None):
    victims = range(n_channels) if victim is None else [int(victim)]
    for v in victims:
        if comm is not None:
            yield v, tuple(int(c) for c in comm)
            continue
        others = [l for l in range(n_channels) if l != v]
        if n_users <= len(others):
            yield from ((v, c) for c in itertools.permutations(others, n_users))
        else:
            yield from ((v, c) for c in itertools.product(others, repeat=n_users))


def _best_effort(ch: ChannelState, cfg: ScenarioConfig) -> OptimizationResult:
    v = int(np.argmax(ch.h_j.sum(axis=0)))
    comm = _claim(ch, v, "app2")
    p = np.full(ch.n_users, cfg.rho)
    alloc = Allocation.from_powers(v, comm, p, cfg.p_bar)
    g = float(np.sum((cfg.p_bar - p) * ch.g_c[np.arange(ch.n_users), list(comm)]))
    return OptimizationResult(alloc, -g, ("cap",) * ch.n_users, False, "none")


def _trp(ch, cfg, v, comm, p):
    comm = np.asarray(comm)
    counts = np.bincount(comm, minlength=ch.n_channels)
    x = counts[comm] == 1
    return float(np.sum((cfg.p_bar - p) * ch.g_c[np.arange(ch.n_users), comm] * x))


def _iterative(ch, cfg, v, comm, c0, c1):
    """Smooth NLP in amplitudes; handles shared communication channels."""
    n = ch.n_users
    comm = np.asarray(comm)
    a = ch.h_j[:, v]
    b = ch.g_j[np.arange(n), comm]
    counts = np.bincount(comm, minlength=ch.n_channels)
    x = (counts[comm] == 1).astype(float)
    groups = [np.flatnonzero(comm == l) for l in np.unique(comm)]
    cap = np.sqrt(cfg.rho)

    def f(d):
        return -float(np.sum(x * (c0 - c1 * d**2)))

    def jac(d):
        return 2.0 * x * c1 * d

    cons = []
    for grp in groups:
        def con(d, grp=grp):
            return float(np.dot(a, d)) ** 2 - float(np.sum((cfg.p_bar - d[grp] ** 2) * b[grp])) - DELTA

        def con_jac(d, grp=grp):
            out = 2.0 * float(np.dot(a, d)) * a
            out[grp] += 2.0 * d[grp] * b[grp]
            return out
        cons.append({"type": "ineq", "fun": con, "jac": con_jac})
    best = None
    for start in (np.full(n, cap), np.full(n, 0.5 * cap)):
        res = minimize(f, start, jac=jac, bounds=[(0.0, cap)] * n, constraints=cons,
                       method="SLSQP", options={"ftol": 1e-12, "maxiter": 500})
        d = _repair(np.clip(res.x, 0.0, cap), cap, cons)
        if d is not None and (best is None or f(d) < f(best)):
            best = d
    return best


def _repair(d, cap, cons):
    """Smallest move toward full deception power that satisfies every constraint.

    Raising every amplitude only helps deception, so feasibility is
    monotone along the segment and bisection finds the boundary.
    """
    def ok(x):
        return all(c["fun"](x) >= 0.0 for c in cons)
    if ok(d):
        return d
    top = np.full_like(d, cap)
    if not ok(top):
        return None
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(d + mid * (top - d)) else (mid, hi)
    return d + hi * (top - d)


def solve_full(ch: ChannelState, cfg: ScenarioConfig, *, victim: int | None = None,
               comm: Sequence[int] | None = None, method: str = "auto",
               objective: str = "trp") -> OptimizationResult:
    """Maximize TRP subject to deceiving the jammer, optionally with fixed channels.

    ``method``: ``"kkt"`` (active-set search over the victim amplitude),
    ``"iterative"`` (SLSQP) or ``"auto"``, which uses the active-set search
    whenever communication channels are distinct and SLSQP otherwise.
    """
    if method not in ("auto", "kkt", "iterative"):
        raise DomainError(f"unknown method {method!r}")
    n = ch.n_users
    idx = np.arange(n)
    scored = []
    for v, c in _assignments(n, ch.n_channels, victim, comm):
        if v in c:
            continue
        g = ch.g_c[idx, list(c)]
        c0, c1 = _objective_terms(g, cfg, objective)
        prob = _Assignment(ch.h_j[:, v], ch.g_j[idx, list(c)], c0, c1, cfg.p_bar, cfg.rho)
        if prob.feasible:
            scored.append((prob.upper_bound(), v, c, prob, c0, c1))
    scored.sort(key=lambda s: -s[0])

    best = None  # (value, v, c, d, method, problem)
    for ub, v, c, prob, c0, c1 in scored:
        if best is not None and ub <= best[0] + 1e-12:
            break
        distinct = len(set(c)) == len(c)
        use_kkt = method == "kkt" or (method == "auto" and distinct)
        if use_kkt and distinct:
            d, tag = prob.solve(polish=False), "kkt"
        else:
            d, tag = _iterative(ch, cfg, v, c, c0, c1), "iterative"
        if d is None:
            continue
        x = np.bincount(np.asarray(c), minlength=ch.n_channels)[list(c)] == 1
        val = float(np.sum(x * (c0 - c1 * d**2)))
        if best is None or val > best[0]:
            best = (val, v, c, d, tag, prob)

    if best is None:
        best = _tie_solution(ch, cfg, victim, comm, objective)
    if best is None:
        return _best_effort(ch, cfg)
    _, v, c, d, tag, prob = best
    if tag == "kkt":
        d = prob.solve()
    p = np.minimum(d**2, cfg.rho)
    alloc = Allocation.from_powers(v, c, p, cfg.p_bar)
    tags = _assignment_tags(p, ch.h_j[:, v], ch.g_j[idx, list(c)], cfg.p_bar, cfg.rho)
    return OptimizationResult(alloc, -_trp(ch, cfg, v, c, p), tags, True, tag)


def _tie_solution(ch, cfg, victim, comm, objective):
    """Boundary allocations where the victim only ties the loudest channel.

    With no strictly dominant allocation inside the cap, an exact tie still
    deceives the jammer when the victim has the lowest index among the tied
    channels (ties go to the lowest index).
    """
    n = ch.n_users
    idx = np.arange(n)
    best = None
    for v, c in _assignments(n, ch.n_channels, victim, comm):
        if v in c or len(set(c)) != len(c):
            continue
        g = ch.g_c[idx, list(c)]
        c0, c1 = _objective_terms(g, cfg, objective)
        prob = _Assignment(ch.h_j[:, v], ch.g_j[idx, list(c)], c0, c1, cfg.p_bar, cfg.rho, delta=0.0)
        if not prob.feasible:
            continue
        d = prob.solve(polish=False)
        if d is None or not _deceives(ch, cfg, v, c, d**2):
            continue
        val = float(np.sum(c0 - c1 * d**2))
        if best is None or val > best[0]:
            best = (val, v, c, d, "kkt-tie", prob)
    if best is not None:
        d = best[5].solve()
        if _deceives(ch, cfg, best[1], best[2], d**2):
            best = best[:3] + (d,) + best[4:]
    return best


def _deceives(ch, cfg, v, comm, p) -> bool:
    alloc = Allocation.from_powers(v, comm, np.minimum(p, cfg.rho), cfg.p_bar)
    sensed = sensed_spectrum(alloc, ch)
    return int(np.argmax(sensed)) == v


# --- grid oracle ---------------------------------------------------------------

def brute_force(ch: ChannelState, cfg: ScenarioConfig, grid_step: float, *,
                objective: str = "trp", victim: int | None = None,
                comm: Sequence[int] | None = None) -> OptimizationResult:
    """Exhaustive search over channel assignments and gridded deception powers.

    Deception is checked exactly as the jammer reacts: the coherent victim
    power must beat every louder-or-equal channel with a lower index and at
    least tie every channel with a higher index. Assignments whose
    optimistic value cannot beat the incumbent are skipped.
    """
    n, L = ch.n_users, ch.n_channels
    if n > 3 or L > 8:
        raise DomainError("grid oracle is limited to N <= 3 and L <= 8")
    if comm is None and n > L - 1:
        raise DomainError("grid oracle needs a distinct communication channel per user")
    levels = power_levels(cfg.rho, grid_step)
    amps = np.sqrt(levels)
    idx = np.arange(n)
    scored = []
    for v, c in _assignments(n, L, victim, comm):
        if v in c or len(set(c)) != len(c):
            continue
        g = ch.g_c[idx, list(c)]
        c0, c1 = _objective_terms(g, cfg, objective)
        prob = _Assignment(ch.h_j[:, v], ch.g_j[idx, list(c)], c0, c1, cfg.p_bar, cfg.rho, delta=0.0)
        scored.append((prob.upper_bound() if prob.feasible else -np.inf, v, c, c0, c1))
    scored.sort(key=lambda s: -s[0])

    best = None  # (value, v, c, p)
    tail = [amps] * (n - 1)
    rest = (np.stack(np.meshgrid(*tail, indexing="ij"), axis=-1).reshape(-1, n - 1)
            if n > 1 else np.zeros((1, 0)))
    for ub, v, c, c0, c1 in scored:
        if not np.isfinite(ub) or (best is not None and ub <= best[0] + 1e-12):
            break
        a = ch.h_j[:, v]
        b = ch.g_j[idx, list(c)]
        below = np.asarray(c) < v  # these channels win ties against the victim
        idle_below = any(l < v and l not in c for l in range(L))
        rest_t = rest @ a[1:]
        rest_cost = (rest**2) @ c1[1:]
        rest_power = (cfg.p_bar - rest**2) * b[1:]
        rest_lo = _row_max(rest_power[:, below[1:]], rest.shape[0])
        rest_hi = _row_max(rest_power[:, ~below[1:]], rest.shape[0])
        if idle_below:
            rest_lo = np.maximum(rest_lo, 0.0)
        for d0 in amps:
            t2 = (d0 * a[0] + rest_t) ** 2
            own = (cfg.p_bar - d0**2) * b[0]
            lo, hi = (np.maximum(rest_lo, own), rest_hi) if below[0] else (rest_lo, np.maximum(rest_hi, own))
            ok = (t2 > lo) & (t2 >= hi)
            if not ok.any():
                continue
            vals = np.where(ok, c0.sum() - c1[0] * d0**2 - rest_cost, -np.inf)
            k = int(np.argmax(vals))
            if best is None or vals[k] > best[0]:
                best = (float(vals[k]), v, c, np.concatenate([[d0], rest[k]]) ** 2)
    if best is None:
        return _best_effort(ch, cfg)
    _, v, c, p = best
    alloc = Allocation.from_powers(v, c, p, cfg.p_bar)
    tags = _assignment_tags(p, ch.h_j[:, v], ch.g_j[idx, list(c)], cfg.p_bar, cfg.rho)
    return OptimizationResult(alloc, -_trp(ch, cfg, v, c, p), tags, True, "grid")


def _row_max(block: np.ndarray, rows: int) -> np.ndarray:
    return block.max(axis=1) if block.shape[1] else np.full(rows, -np.inf)
