import csv
import math

import numpy as np
import pytest

from decoyjam import ScenarioConfig
from decoyjam import experiments as ex
from decoyjam.cli import int_range, main


def read_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    return lines[0], list(csv.DictReader(lines[1:]))


def test_registry_covers_figures():
    assert sorted(s.figure for s in ex.REGISTRY.values()) == list(range(3, 11))
    assert ex.get_experiment("fig9").grid == ((3, 5),)
    with pytest.raises(Exception):
        ex.get_experiment("fig99")


def test_int_range():
    assert int_range("1..3") == [1, 2, 3]
    assert int_range("4,6") == [4, 6]
    assert int_range("5") == [5]


def test_sustained_crossing():
    assert ex.sustained_crossing([0.1, 0.97, 0.5, 0.96, 0.99], 0.95) == 3
    assert ex.sustained_crossing([0.96, 0.97], 0.95) == 0
    assert ex.sustained_crossing([0.96, 0.5], 0.95) is None
    assert ex.sustained_crossing([], 0.95) is None


def test_trials_are_reproducible_and_order_free():
    spec = ex.get_experiment("fig5")
    cfg = ScenarioConfig()
    grid = ((1, 6), (2, 6))
    a = ex.run_trials(spec, cfg, 2, 1, grid)
    b = ex.run_trials(spec, cfg, 2, 1, grid[::-1])
    assert [r.summary for r in a] == [r.summary for r in b]
    ratios = [v for r in a for v in r.summary.values()]
    assert all(0 <= v <= 1 for v in ratios)


def test_csv_format(tmp_path):
    path = ex.write_csv(tmp_path / "x.csv", ["a", "b", "c"], [[1, math.nan, 0.1 + 0.2], [True, 2.5, "s"]], "abc")
    assert path.read_bytes() == b"# config_hash=abc\na,b,c\n1,NA,0.3\n1,2.5,s\n"


def test_bounds_cli_is_deterministic(tmp_path, capsys):
    args = ["bounds", "--figures", "3,4", "--n", "1..2", "--l", "4..6"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for fig in ("fig3.csv", "fig4.csv"):
        assert (tmp_path / "a" / fig).read_bytes() == (tmp_path / "b" / fig).read_bytes()
    head, rows = read_rows(tmp_path / "a" / "fig3.csv")
    assert len(rows) == 6
    capsys.readouterr()
    main(["bounds", "--figures", "3", "--n", "1", "--l", "4", "--set", "rho=4", "--out", str(tmp_path / "c")])
    assert read_rows(tmp_path / "c" / "fig3.csv")[0] != head


def test_rho_sweep_cli(tmp_path):
    assert main(["bounds", "--figures", "5", "--n", "1", "--rho", "1,5", "--seeds", "2",
                 "--out", str(tmp_path)]) == 0
    _, rows = read_rows(tmp_path / "fig5.csv")
    assert rows


def test_solve_symmetric(tmp_path, capsys):
    assert main(["solve", "--n", "2", "--l", "4", "--symmetric", "--verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    d2 = [float(x) for x in next(line for line in out.splitlines() if line.startswith("d^2")).split()[1:]]
    np.testing.assert_allclose(d2, 2.0, atol=1e-8)
    assert "ok" in out
    assert (tmp_path / "solve.csv").exists()


def test_solve_infeasible_exit_code(tmp_path):
    assert main(["solve", "--n", "1", "--l", "2", "--symmetric", "--victim", "1", "--comm", "0",
                 "--out", str(tmp_path)]) == 1


def test_usage_errors(tmp_path, capsys):
    assert main(["solve", "--set", "rho=20", "--out", str(tmp_path)]) == 2
    assert main(["solve", "--set", "bogus=1", "--out", str(tmp_path)]) == 2
    assert main(["bounds", "--figures", "5", "--rho", "0", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "fig3", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_list(capsys):
    assert main(["list"]) == 0
    assert "fig9" in capsys.readouterr().out


def test_simulate_writes_seed_and_trace_files(tmp_path, capsys):
    code = main(["simulate", "fig6", "--seeds", "2", "--l", "4", "--set", "phi_eps=300",
                 "--out", str(tmp_path)])
    assert code in (0, 1)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["fig6_aggregate.csv", "fig6_seeds.csv", "fig6_trace.csv", "fig6_trace_aggregate.csv"]
    _, seeds = read_rows(tmp_path / "fig6_seeds.csv")
    assert [r["seed"] for r in seeds] == ["0", "1"]
    assert "N=1 L=4" in capsys.readouterr().out
