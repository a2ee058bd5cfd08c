"""Experiment registry, per-seed trials and CSV emitters for the figure data.

Every trial is a pure function of ``(config, n, l, seed)``, so trials can fan
out to worker processes; results are re-sorted by ``(n, l, seed)`` before
anything is written.
"""

from __future__ import annotations

import csv
import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import bounds
from .engine import Environment, aggregate
from .errors import ConfigurationError
from .model import ScenarioConfig, draw_channels, fmt, make_rng
from .oracle import claim_channels, solve_full
from .rl.qlearning import run_algorithm1
from .rl.srl import run_algorithm2

CONVERGENCE_LEVEL = 0.95
REPLAY_SLOTS = 1000


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    figure: int
    scenario: str  # "bounds", "unknown" (gains unknown, comm learned) or "known"
    grid: tuple[tuple[int, int], ...]
    overrides: dict = field(default_factory=dict)
    n_seeds: int = 10
    description: str = ""

    def __post_init__(self):
        if self.figure not in range(3, 11):
            raise ConfigurationError(f"{self.name}: figure {self.figure} outside 3..10")
        if self.scenario not in ("bounds", "unknown", "known"):
            raise ConfigurationError(f"{self.name}: unknown scenario {self.scenario!r}")


@dataclass
class TrialRecord:
    """Outcome of one seed at one grid point: scalar summary plus sampled traces."""

    n: int
    l: int
    seed: int
    summary: dict[str, float]
    traces: dict[str, list[float]] = field(default_factory=dict)
    trace_slots: list[int] = field(default_factory=list)


def _grid(ns: Iterable[int], ls: Iterable[int]) -> tuple[tuple[int, int], ...]:
    return tuple((n, l) for n in ns for l in ls)


REGISTRY: dict[str, ExperimentSpec] = {}


def register(spec: ExperimentSpec) -> ExperimentSpec:
    if spec.name in REGISTRY:
        raise ConfigurationError(f"experiment {spec.name!r} already registered")
    REGISTRY[spec.name] = spec
    return spec


register(ExperimentSpec("fig3", 3, "bounds", _grid(range(1, 6), range(4, 15)),
                        description="minimum deception power fraction E(P)/p_bar, APP1 and APP2"))
register(ExperimentSpec("fig4", 4, "bounds", _grid(range(1, 6), range(3, 15)),
                        description="analytic ETRP ratios of APP1 and APP2"))
register(ExperimentSpec("fig5", 5, "bounds", _grid(range(1, 4), (6,)),
                        overrides={"rho_grid": tuple(float(r) for r in range(1, 11))}, n_seeds=20,
                        description="oracle TRP ratio versus rho (Monte Carlo over draws)"))
register(ExperimentSpec("fig6", 6, "unknown", _grid((1,), range(4, 9)), {"power_step": 0.2}, 20,
                        "Q-learning, one user, power step 0.2"))
register(ExperimentSpec("fig7", 7, "unknown", _grid((2,), range(5, 10)), {"power_step": 2.0}, 20,
                        "Q-learning, two users, power step 2"))
register(ExperimentSpec("fig8", 8, "known", _grid((3,), range(5, 10)), {}, 10,
                        "successive refinement, three users"))
register(ExperimentSpec("fig9", 9, "known", ((3, 5),), {"flat_step": 0.1, "budget": 20000}, 10,
                        "successive refinement versus flat Q-learning at step 0.1"))
register(ExperimentSpec("fig10", 10, "known", _grid(range(1, 4), range(6, 9)), {}, 10,
                        "success rate during learning and on greedy replay"))


def get_experiment(name: str) -> ExperimentSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown experiment {name!r}; known: {', '.join(REGISTRY)}") from None


def trial_rng(cfg: ScenarioConfig, seed: int) -> np.random.Generator:
    return make_rng(cfg.seed, seed)


def sustained_crossing(series: Sequence[float], level: float) -> int | None:
    """First slot from which ``series`` stays at or above ``level``; None if it ends below."""
    s = np.asarray(series, dtype=float)
    if s.size == 0 or s[-1] < level:
        return None
    below = np.flatnonzero(s < level)
    return int(below[-1] + 1) if below.size else 0


def matched_oracle_ratio(ch, cfg: ScenarioConfig) -> float:
    """TRP ratio of the convex optimum with every user on its claimed channel."""
    res = solve_full(ch, cfg, comm=claim_channels(ch))
    return Environment(ch, cfg).ratio(res.trp)


def replay_success(ch, cfg: ScenarioConfig, alloc, rng, slots: int = REPLAY_SLOTS) -> float:
    """Play a fixed allocation against a fresh jammer and report the jammed-victim fraction."""
    env = Environment(ch, cfg, rng)
    hits = 0
    for _ in range(slots):
        out = env.step(alloc.victim_channel, alloc.comm_channels, alloc.deceive_power)
        hits += out.zeta == 0
    return hits / slots


def _sample(trace, names: dict[str, str], every: int) -> tuple[list[int], dict[str, list[float]]]:
    total = len(trace)
    idx = list(range(0, total, every))
    if total and idx[-1] != total - 1:
        idx.append(total - 1)
    out = {}
    for col, attr in names.items():
        series = getattr(trace, attr)
        if attr == "zeta":
            out[col] = [float(series[i] == 0) for i in idx]
        else:
            out[col] = [float(series[i]) for i in idx]
    return idx, out


_Q_TRACE = {"epsilon": "epsilon", "trp_ratio": "trp_ratio", "greedy_ratio": "greedy_ratio",
            "success": "zeta"}


def qlearning_trial(cfg: ScenarioConfig, n: int, l: int, seed: int, every: int = 50) -> TrialRecord:
    c = cfg.replace(n_users=n, n_channels=l)
    rng = trial_rng(c, seed)
    ch = draw_channels(c, rng)
    res = run_algorithm1(ch, c, rng)
    slots, traces = _sample(res.trace, _Q_TRACE, every)
    summary = {"slots": res.slots, "converged": int(res.converged), "greedy_ratio": res.greedy_ratio,
               "success": int(res.outcome.zeta == 0), "top": Environment(ch, c).top}
    return TrialRecord(n, l, seed, summary, traces, slots)


def srl_trial(cfg: ScenarioConfig, n: int, l: int, seed: int, every: int = 50,
              replay: bool = False) -> TrialRecord:
    c = cfg.replace(n_users=n, n_channels=l)
    rng = trial_rng(c, seed)
    ch = draw_channels(c, rng)
    res = run_algorithm2(ch, c, rng)
    oracle = matched_oracle_ratio(ch, c)
    slots, traces = _sample(res.trace, _Q_TRACE, every)
    summary = {"slots": res.slots, "stages": len(res.stages), "greedy_ratio": res.greedy_ratio,
               "oracle_ratio": oracle, "relative": res.greedy_ratio / oracle if oracle > 0 else math.nan,
               "success": int(res.outcome.zeta == 0)}
    if replay:
        summary["replay_success"] = replay_success(ch, c, res.allocation, make_rng(c.seed, seed, 1))
    return TrialRecord(n, l, seed, summary, traces, slots)


def convergence_trial(cfg: ScenarioConfig, n: int, l: int, seed: int, every: int = 50,
                      flat_step: float = 0.1, budget: int = 20000) -> TrialRecord:
    """SRL and flat Q-learning on the same draw, both measured against the matched oracle.

    Crossing slots are censored at ``budget`` (reported as NaN when not reached).
    """
    c = cfg.replace(n_users=n, n_channels=l)
    rng = trial_rng(c, seed)
    ch = draw_channels(c, rng)
    oracle = matched_oracle_ratio(ch, c)
    level = CONVERGENCE_LEVEL * oracle
    srl = run_algorithm2(ch, c, rng, max_slots=budget)
    flat = run_algorithm1(ch, c, make_rng(c.seed, seed, 1), known_comm=True, power_step=flat_step,
                          phi_eps=c.phi_eps, max_slots=budget)
    srl_cross = sustained_crossing(srl.trace.greedy_ratio, level)
    flat_cross = sustained_crossing(flat.trace.greedy_ratio, level)
    summary = {"oracle_ratio": oracle,
               "srl_ratio": srl.greedy_ratio, "srl_slots": srl.slots,
               "srl_crossing": math.nan if srl_cross is None else srl_cross,
               "flat_ratio": flat.greedy_ratio, "flat_slots": flat.slots,
               "flat_crossing": math.nan if flat_cross is None else flat_cross}
    horizon = max(len(srl.trace), len(flat.trace))
    idx = list(range(0, horizon, every))
    norm = oracle if oracle > 0 else 1.0

    def padded(series):
        return [series[min(i, len(series) - 1)] / norm for i in idx]

    traces = {"srl_relative": padded(srl.trace.greedy_ratio), "flat_relative": padded(flat.trace.greedy_ratio)}
    return TrialRecord(n, l, seed, summary, traces, idx)


def oracle_rho_trial(cfg: ScenarioConfig, n: int, l: int, seed: int,
                     rho_grid: Sequence[float] = ()) -> TrialRecord:
    """Oracle TRP ratio for one draw at every rho; infeasible rho values score zero."""
    c = cfg.replace(n_users=n, n_channels=l)
    ch = draw_channels(c, trial_rng(c, seed))
    env = Environment(ch, c)
    summary = {}
    for rho in rho_grid:
        cr = c.replace(rho=float(rho))
        res = solve_full(ch, cr)
        summary[f"rho={fmt(rho)}"] = env.ratio(res.trp) if res.feasible else 0.0
    return TrialRecord(n, l, seed, summary)


def _resolve_trial(spec: ExperimentSpec) -> Callable[..., TrialRecord]:
    if spec.figure in (6, 7):
        return qlearning_trial
    if spec.figure == 8:
        return srl_trial
    if spec.figure == 9:
        return convergence_trial
    if spec.figure == 10:
        return srl_trial
    if spec.figure == 5:
        return oracle_rho_trial
    raise ConfigurationError(f"{spec.name} has no per-seed trials")


def _trial_kwargs(spec: ExperimentSpec, every: int) -> dict:
    if spec.figure == 5:
        return {"rho_grid": spec.overrides["rho_grid"]}
    kw = {"every": every}
    if spec.figure == 9:
        kw.update(flat_step=spec.overrides["flat_step"], budget=spec.overrides["budget"])
    if spec.figure == 10:
        kw["replay"] = True
    return kw


def base_config(spec: ExperimentSpec, cfg: ScenarioConfig) -> ScenarioConfig:
    keys = {k: v for k, v in spec.overrides.items() if k in cfg.as_dict()}
    return cfg.replace(**keys)


def _call(args):
    fn, cfg, n, l, seed, kw = args
    return fn(cfg, n, l, seed, **kw)


def run_trials(spec: ExperimentSpec, cfg: ScenarioConfig, seeds: int | None = None, jobs: int = 1,
               grid: Sequence[tuple[int, int]] | None = None, every: int = 50) -> list[TrialRecord]:
    fn = _resolve_trial(spec)
    cfg = base_config(spec, cfg)
    kw = _trial_kwargs(spec, every)
    seeds = spec.n_seeds if seeds is None else seeds
    tasks = [(fn, cfg, n, l, s, kw) for n, l in (grid or spec.grid) for s in range(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_call, tasks))
    else:
        records = [_call(t) for t in tasks]
    return sorted(records, key=lambda r: (r.n, r.l, r.seed))


def experiment_hash(cfg: ScenarioConfig, **extra) -> str:
    text = cfg.config_hash() + "".join(f"\n{k}={extra[k]!r}" for k in sorted(extra))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) and math.isnan(v):
        return "NA"
    if isinstance(v, (float, np.floating)):
        return fmt(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], digest: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_trial_csvs(spec: ExperimentSpec, records: list[TrialRecord], out: Path, digest: str) -> list[Path]:
    """Per-seed summary and trace CSVs plus aggregates across seeds."""
    paths = []
    keys = list(records[0].summary) if records else []
    paths.append(write_csv(out / f"{spec.name}_seeds.csv", ["n", "l", "seed", *keys],
                           ([r.n, r.l, r.seed, *(r.summary[k] for k in keys)] for r in records), digest))

    agg_rows = []
    for (n, l), group in _by_point(records):
        for k in keys:
            vals = [float(r.summary[k]) for r in group if not math.isnan(float(r.summary[k]))]
            a = aggregate(vals) if vals else {"n": 0, "mean": math.nan, "median": math.nan, "se": math.nan}
            agg_rows.append([n, l, k, a["n"], a["mean"], a["median"], a["se"]])
    paths.append(write_csv(out / f"{spec.name}_aggregate.csv",
                           ["n", "l", "metric", "count", "mean", "median", "se"], agg_rows, digest))

    if records and records[0].traces:
        cols = list(records[0].traces)
        rows = ([r.n, r.l, r.seed, t, *(r.traces[c][i] for c in cols)]
                for r in records for i, t in enumerate(r.trace_slots))
        paths.append(write_csv(out / f"{spec.name}_trace.csv", ["n", "l", "seed", "slot", *cols], rows, digest))
        paths.append(write_csv(out / f"{spec.name}_trace_aggregate.csv",
                               ["n", "l", "slot", "metric", "mean", "median", "se"],
                               _trace_aggregate(records, cols), digest))
    return paths


def _by_point(records):
    groups: dict[tuple[int, int], list[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.n, r.l), []).append(r)
    return sorted(groups.items())


def _trace_aggregate(records, cols):
    """Mean across seeds per slot; a finished run holds its last sampled value."""
    for (n, l), group in _by_point(records):
        slots = sorted({t for r in group for t in r.trace_slots})
        for c in cols:
            table = np.array([np.interp(slots, r.trace_slots, r.traces[c], right=r.traces[c][-1])
                              for r in group])
            se = table.std(axis=0, ddof=1) / np.sqrt(len(group)) if len(group) > 1 else np.full(len(slots), np.nan)
            mean, med = table.mean(axis=0), np.median(table, axis=0)
            for j, t in enumerate(slots):
                yield [n, l, t, c, mean[j], med[j], se[j]]


def bounds_rows(figure: int, ns: Iterable[int], ls: Iterable[int], lam: float = 1.0,
                p_bar: float = 10.0) -> tuple[list[str], list[list]]:
    if figure == 3:
        header = ["n", "l", "min_rho_fraction_app1", "min_rho_fraction_app2"]
        rows = []
        for n in ns:
            for l in ls:
                b = bounds.bound_set(n, l, lam, p_bar)
                rows.append([n, l, b.min_rho_fraction_app1, b.min_rho_fraction_app2])
        return header, rows
    if figure == 4:
        header = ["n", "l", "ratio_app1", "ratio_app2"]
        rows = []
        for n in ns:
            for l in ls:
                b = bounds.bound_set(n, l, lam, p_bar)
                rows.append([n, l, b.ratio_app1, b.ratio_app2])
        return header, rows
    raise ConfigurationError(f"figure {figure} is not an analytic table")


def rho_sweep_rows(records: list[TrialRecord]) -> tuple[list[str], list[list]]:
    """Mean oracle ratio per (n, l, rho) across draws."""
    rows = []
    for (n, l), group in _by_point(records):
        for key in group[0].summary:
            vals = [r.summary[key] for r in group]
            a = aggregate(vals)
            rows.append([n, l, float(key.split("=", 1)[1]), a["n"], a["mean"], a["se"]])
    return ["n", "l", "rho", "draws", "mean_ratio", "se"], rows
