import numpy as np
import pytest

from decoyjam import (Allocation, ChannelState, DegenerateChannelError, DomainError, JammerState,
                      ScenarioConfig, draw_channels, make_rng, react, sensed_spectrum)
from decoyjam.oracle import (DELTA, brute_force, claim_channels, select_channels, sherman_morrison_check,
                             solve_full, solve_modified)

CFG = ScenarioConfig()


def cfg_for(n, l, **kw):
    return CFG.replace(n_users=n, n_channels=l, **kw)


def replay_jams_victim(ch, res):
    return react(JammerState(ch.n_channels), sensed_spectrum(res.allocation, ch)).current_channel == \
        res.allocation.victim_channel


def test_single_user_boundary_closed_form():
    # d^2 h_jv^2 = (P - d^2) h'^2 with unit gains gives d^2 = P/2 = rho
    ch = ChannelState(np.array([[1.0, 2.7]]), np.ones((1, 2)))
    res = solve_full(ch, cfg_for(1, 2), victim=0, comm=(1,))
    assert res.powers[0] == pytest.approx(5.0, abs=1e-9)
    assert res.allocation.comm_power[0] == pytest.approx(5.0, abs=1e-9)
    assert res.feasible and replay_jams_victim(ch, res)


def test_single_user_general_closed_form():
    ch = ChannelState(np.ones((1, 2)), np.array([[2.0, 1.5]]))
    res = solve_full(ch, cfg_for(1, 2), victim=0, comm=(1,))
    exact = 10.0 * 2.25 / (4.0 + 2.25)
    assert res.powers[0] == pytest.approx(exact + DELTA / 6.25, abs=1e-9)
    assert res.active_constraints == ("deception",)


def test_tie_resolved_against_victim_is_infeasible():
    # same boundary, but the comm channel has the lower index: the tie goes to it
    ch = ChannelState.uniform(1, 2)
    res = solve_full(ch, cfg_for(1, 2), victim=1, comm=(0,))
    assert not res.feasible
    assert res.powers[0] == pytest.approx(CFG.rho)


@pytest.mark.parametrize("n, expected", [(2, 2.0), (3, 1.0)])
def test_symmetric_closed_forms(n, expected):
    res = solve_full(ChannelState.uniform(n, n + 2), cfg_for(n, n + 2))
    np.testing.assert_allclose(res.powers, expected, atol=1e-9)
    assert res.method == "kkt" and res.feasible


def test_kkt_and_iterative_agree():
    cfg = cfg_for(2, 5)
    for s in range(15):
        ch = draw_channels(cfg, make_rng(s))
        a, b = solve_full(ch, cfg), solve_full(ch, cfg, method="iterative")
        assert a.objective <= b.objective + 1e-7
        assert b.method == "iterative"


@pytest.mark.parametrize("n, l", [(1, 4), (2, 5), (3, 6)])
def test_feasible_allocations_deceive_and_respect_constraints(n, l):
    cfg = cfg_for(n, l)
    for s in range(20):
        ch = draw_channels(cfg, make_rng(s))
        res = solve_full(ch, cfg)
        if not res.feasible:
            continue
        assert res.allocation.violations(cfg) == []
        sensed = sensed_spectrum(res.allocation, ch)
        v = res.allocation.victim_channel
        assert sensed[v] >= np.delete(sensed, v).max() + DELTA - 1e-9
        assert replay_jams_victim(ch, res)


def test_infeasible_returns_best_effort():
    ch = ChannelState(np.ones((2, 4)), np.array([[0.1, 3, 3, 3], [0.1, 3, 3, 3]]))
    cfg = cfg_for(2, 4, rho=0.5)
    res = solve_full(ch, cfg)
    assert not res.feasible
    np.testing.assert_allclose(res.powers, 0.5)


def test_result_csv(tmp_path):
    res = solve_full(ChannelState.uniform(2, 3), cfg_for(2, 3))
    res.to_csv(tmp_path / "r.csv", header_comment="config_hash=abc")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=abc"
    assert lines[1] == "user,victim,comm,d2,dprime2,tag,objective,feasible,method"
    assert len(lines) == 4


def test_modified_examples():
    one = ChannelState.uniform(1, 2)
    assert solve_modified(one, cfg_for(1, 2), 0, (1,)).raw == pytest.approx([5.0])
    two = ChannelState.uniform(2, 3)
    sol = solve_modified(two, cfg_for(2, 3), 0, (1, 2))
    np.testing.assert_allclose(sol.raw, [10 / 3, 10 / 3], rtol=1e-12)
    assert sol.within_cap and not sol.clamped
    assert sherman_morrison_check(two, cfg_for(2, 3), 0, (1, 2)) < 1e-12


def test_modified_without_leverage_pins_to_cap():
    ch = ChannelState(np.ones((2, 3)), np.array([[0.0, 1, 1], [0.0, 1, 1]]))
    sol = solve_modified(ch, cfg_for(2, 3), 0, (1, 2))
    np.testing.assert_allclose(sol.raw, 10.0)
    assert not sol.within_cap
    np.testing.assert_allclose(sol.powers, CFG.rho)


def test_modified_singular():
    ch = ChannelState(np.ones((1, 2)), np.array([[1.0, 0.0]]))
    with pytest.raises(DegenerateChannelError):
        solve_modified(ch, cfg_for(1, 2), 0, (1,))


def test_modified_single_user_matches_full():
    cfg = cfg_for(1, 4)
    for s in range(20):
        ch = draw_channels(cfg, make_rng(s))
        v, comm = 0, (1,)
        full = solve_full(ch, cfg, victim=v, comm=comm)
        mod = solve_modified(ch, cfg, v, comm)
        if mod.within_cap and full.feasible:
            assert mod.raw[0] == pytest.approx(full.powers[0], abs=1e-8)


@pytest.mark.parametrize("n", [2, 3])
def test_modified_allocation_is_a_lower_bound(n):
    # the linearized victim sum never exceeds the coherent one, so the linearized
    # powers always deceive and can only cost TRP relative to the convex optimum
    cfg = cfg_for(n, 6, rho=10.0)
    idx = np.arange(n)
    for s in range(100):
        ch = draw_channels(cfg, make_rng(s))
        v, comm = select_channels(ch, "app2")
        full = solve_full(ch, cfg, victim=v, comm=comm)
        mod = solve_modified(ch, cfg, v, comm, slack=DELTA)
        assert full.feasible and mod.within_cap
        alloc = Allocation.from_powers(v, comm, mod.powers, cfg.p_bar)
        assert react(JammerState(6), sensed_spectrum(alloc, ch)).current_channel == v
        g_mod = float(np.sum((cfg.p_bar - mod.powers) * ch.g_c[idx, list(comm)]))
        assert g_mod <= full.trp + 1e-9


def test_sherman_morrison_random():
    cfg = cfg_for(4, 6)
    worst = max(sherman_morrison_check(ch, cfg, *select_channels(ch))
                for ch in (draw_channels(cfg, make_rng(s)) for s in range(100)))
    assert worst < 1e-9


def test_channel_rules():
    g_c = np.array([[1.0, 5.0, 4.0, 0.5], [1.0, 5.0, 4.0, 3.0]])
    g_j = np.array([[9.0, 0.1, 0.2, 1.0], [9.0, 1.0, 0.1, 0.3]])
    ch = ChannelState.from_power_gains(g_c, g_j)
    assert select_channels(ch, "app2") == (0, (1, 2))
    assert select_channels(ch, "app1") == (0, (1, 2))
    assert claim_channels(ch) == (1, 2)


def test_brute_force_examples():
    one = ChannelState(np.array([[1.0, 1.3]]), np.ones((1, 2)))
    cfg1 = cfg_for(1, 2)
    bf = brute_force(one, cfg1, 0.05)
    full = solve_full(one, cfg1)
    assert full.objective <= bf.objective + 0.05 * 1.3**2
    two = brute_force(ChannelState.uniform(2, 3), cfg_for(2, 3), 0.1)
    np.testing.assert_allclose(two.powers, 2.0, atol=1e-12)
    assert two.method == "grid"


def test_brute_force_rho_zero_limit():
    ch = ChannelState.uniform(1, 3)
    tiny = cfg_for(1, 3, rho=1e-6)
    assert not brute_force(ch, tiny, 1e-6).feasible


def test_brute_force_limits():
    with pytest.raises(DomainError):
        brute_force(ChannelState.uniform(4, 6), cfg_for(4, 6), 0.5)


def test_oracle_not_worse_than_grid_small_sample():
    for n, l in [(1, 4), (2, 4), (3, 6)]:
        cfg = cfg_for(n, l)
        for s in range(10):
            ch = draw_channels(cfg, make_rng(s))
            assert solve_full(ch, cfg).objective <= brute_force(ch, cfg, 0.05).objective + n * 0.05 * ch.g_c.max()
