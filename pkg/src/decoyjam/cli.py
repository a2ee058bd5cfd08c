"""Command-line entry point: ``decoyjam {bounds,solve,simulate,list}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import ConfigurationError, DecoyJamError, DomainError
from .model import ChannelState, ScenarioConfig, draw_channels, fmt, make_rng, read_config_file
from .oracle import brute_force, solve_full

log = logging.getLogger("decoyjam")

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2


def int_range(text: str) -> list[int]:
    """``"3"``, ``"1..5"`` (inclusive) or ``"4,6,8"``."""
    out: list[int] = []
    try:
        for part in text.split(","):
            if ".." in part:
                lo, hi = part.split("..")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer range {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty range")
    return out


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def resolve_config(args) -> ScenarioConfig:
    """File values first, then ``--set`` overrides, then dedicated flags."""
    values: dict[str, str] = {}
    if args.config:
        values.update(read_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise DomainError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    return ScenarioConfig.from_mapping(values)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value file with ScenarioConfig fields")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decoyjam", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="analytic bound tables and the oracle rho sweep")
    _common(b)
    b.add_argument("--n", type=int_range, help="user counts, e.g. 1..5")
    b.add_argument("--l", type=int_range, help="channel counts, e.g. 4..14")
    b.add_argument("--figures", type=int_range, default=[3, 4, 5])
    b.add_argument("--rho", type=float_list, help="rho grid for fig5")
    b.add_argument("--seeds", type=int, help="Monte Carlo draws per point for fig5")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--seed", type=int)

    s = sub.add_parser("solve", help="oracle allocation for one channel realization")
    _common(s)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--l", type=int, default=4)
    s.add_argument("--seed", type=int)
    s.add_argument("--channels", type=Path, help="CSV with user,channel,h_c,h_j rows")
    s.add_argument("--symmetric", action="store_true", help="all gains equal to 1")
    s.add_argument("--victim", type=int)
    s.add_argument("--comm", type=int_range)
    s.add_argument("--method", choices=("auto", "kkt", "iterative"), default="auto")
    s.add_argument("--verify", action="store_true", help="compare against brute force on a 0.05 grid")

    m = sub.add_parser("simulate", help="run a registered learning experiment")
    _common(m)
    m.add_argument("name")
    m.add_argument("--seeds", type=int)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--n", type=int_range, help="restrict the grid to these user counts")
    m.add_argument("--l", type=int_range, help="restrict the grid to these channel counts")
    m.add_argument("--trace-every", type=int, default=50, help="trace sampling stride in slots")
    m.add_argument("--seed", type=int)

    sub.add_parser("list", help="list registered experiments")
    return parser


def cmd_list(args) -> int:
    for spec in ex.REGISTRY.values():
        grid = sorted({n for n, _ in spec.grid}), sorted({l for _, l in spec.grid})
        print(f"{spec.name:6s} fig{spec.figure:<3d} {spec.scenario:8s} N={grid[0]} L={grid[1]} "
              f"seeds={spec.n_seeds}  {spec.description}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = resolve_config(args)
    for fig in args.figures:
        spec = ex.get_experiment(f"fig{fig}")
        ns = args.n or sorted({n for n, _ in spec.grid})
        ls = args.l or sorted({l for _, l in spec.grid})
        if fig in (3, 4):
            digest = ex.experiment_hash(cfg, name=spec.name, n=ns, l=ls)
            header, rows = ex.bounds_rows(fig, ns, ls, cfg.lambda_rate, cfg.p_bar)
        elif fig == 5:
            rho = tuple(args.rho or spec.overrides["rho_grid"])
            bad = [r for r in rho if not 0 < r <= cfg.p_bar]
            if bad:
                raise DomainError(f"rho values {bad} outside (0, p_bar]")
            spec = ex.ExperimentSpec(spec.name, 5, "bounds", tuple((n, l) for n in ns for l in ls),
                                     {"rho_grid": rho}, spec.n_seeds, spec.description)
            seeds = args.seeds or spec.n_seeds
            digest = ex.experiment_hash(cfg, name=spec.name, n=ns, l=ls, rho=rho, seeds=seeds)
            records = ex.run_trials(spec, cfg, seeds, args.jobs)
            header, rows = ex.rho_sweep_rows(records)
        else:
            raise DomainError(f"bounds covers figures 3, 4 and 5, not {fig}")
        path = ex.write_csv(args.out / f"fig{fig}.csv", header, rows, digest)
        print(path)
    return EXIT_OK


def _channels(args, cfg: ScenarioConfig) -> ChannelState:
    if args.channels:
        return ChannelState.from_csv(args.channels)
    if args.symmetric:
        return ChannelState.uniform(cfg.n_users, cfg.n_channels)
    return draw_channels(cfg, make_rng(cfg.seed))


def cmd_solve(args) -> int:
    cfg = resolve_config(args)
    cfg = cfg.replace(n_users=args.n, n_channels=args.l)
    ch = _channels(args, cfg)
    cfg = cfg.replace(n_users=ch.n_users, n_channels=ch.n_channels)
    res = solve_full(ch, cfg, victim=args.victim, comm=tuple(args.comm) if args.comm else None,
                     method=args.method)
    a = res.allocation
    print(f"method      {res.method}")
    print(f"feasible    {res.feasible}")
    print(f"victim      {a.victim_channel}")
    print(f"comm        {' '.join(map(str, a.comm_channels))}")
    print(f"d^2         {' '.join(fmt(x) for x in a.deceive_power)}")
    print(f"d'^2        {' '.join(fmt(x) for x in a.comm_power)}")
    print(f"active      {' '.join(res.active_constraints)}")
    print(f"objective   {fmt(res.objective)}")
    print(f"rho slack   {' '.join(fmt(cfg.rho - x) for x in a.deceive_power)}")
    args.out.mkdir(parents=True, exist_ok=True)
    res.to_csv(args.out / "solve.csv", header_comment=f"config_hash={cfg.config_hash()}")
    if args.verify:
        step = 0.05
        bf = brute_force(ch, cfg, step, victim=args.victim, comm=tuple(args.comm) if args.comm else None)
        bound = ch.n_users * step * float(ch.g_c.max())
        gap = res.objective - bf.objective
        print(f"brute force {fmt(bf.objective)} (d^2 {' '.join(fmt(x) for x in bf.powers)})")
        print(f"gap         {fmt(gap)} (bound {fmt(bound)}) {'ok' if gap <= bound + 1e-9 else 'EXCEEDED'}")
        if gap > bound + 1e-9:
            return EXIT_INFEASIBLE
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    spec = ex.get_experiment(args.name)
    if spec.scenario == "bounds":
        raise DomainError(f"{spec.name} is produced by the bounds command")
    grid = [(n, l) for n, l in spec.grid
            if (args.n is None or n in args.n) and (args.l is None or l in args.l)]
    if not grid:
        raise DomainError("grid restriction leaves no points")
    seeds = args.seeds or spec.n_seeds
    digest = ex.experiment_hash(ex.base_config(spec, cfg), name=spec.name, grid=grid, seeds=seeds,
                                every=args.trace_every)
    log.info("running %s: %d points x %d seeds", spec.name, len(grid), seeds)
    records = ex.run_trials(spec, cfg, seeds, args.jobs, grid, args.trace_every)
    for path in ex.write_trial_csvs(spec, records, args.out, digest):
        print(path)
    for (n, l), group in ex._by_point(records):
        keys = [k for k in ("greedy_ratio", "relative", "replay_success", "srl_crossing", "flat_crossing")
                if k in group[0].summary]
        stats = "  ".join(f"{k}={fmt(float(np.nanmean([r.summary[k] for r in group])))}" for k in keys)
        print(f"N={n} L={l}  {stats}")
    diverged = [r for r in records if r.summary.get("converged") == 0]
    return EXIT_INFEASIBLE if diverged else EXIT_OK


COMMANDS = {"bounds": cmd_bounds, "solve": cmd_solve, "simulate": cmd_simulate, "list": cmd_list}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DomainError) as exc:
        print(f"decoyjam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DecoyJamError as exc:
        print(f"decoyjam: failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
