import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoyjam import (Allocation, ChannelState, ConfigurationError, ScenarioConfig, draw_channels,
                      interference_free, make_rng, power_levels, sensed_spectrum, trp_at_ap,
                      upsilon_top)
from decoyjam.model import read_config_file

amps = st.floats(0.0, 5.0, allow_nan=False)


def test_defaults():
    cfg = ScenarioConfig()
    assert (cfg.p_bar, cfg.rho, cfg.lambda_rate) == (10.0, 5.0, 1.0)
    assert cfg.weights == (3.5, 1.5, 1.5)
    assert (cfg.alpha, cfg.gamma, cfg.phi_eps, cfg.eps_thr) == (0.9, 0.9, 10000.0, 1e-4)
    assert cfg.jammer_random_prob == 0.0


@pytest.mark.parametrize("kw", [
    {"rho": 0.0}, {"rho": 11.0}, {"n_channels": 1}, {"n_users": 0}, {"lambda_rate": 0.0},
    {"w2": -1.0}, {"alpha": 1.5}, {"penalty_norm": "sqrt"}, {"td_schedule": ((0.5, 2.0),)},
    {"jammer_random_prob": 2.0},
])
def test_invalid_config(kw):
    with pytest.raises(ConfigurationError):
        ScenarioConfig(**kw)


def test_config_file_and_hash(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nn_users = 2\nrho=4.5\npathloss_enabled=true\ntd_schedule=2:0.5,0.5:0.1\n")
    cfg = ScenarioConfig.from_mapping(read_config_file(path))
    assert cfg.n_users == 2 and cfg.rho == 4.5 and cfg.pathloss_enabled
    assert cfg.td_schedule == ((2.0, 0.5), (0.5, 0.1))
    assert cfg.config_hash() == ScenarioConfig(n_users=2, rho=4.5, pathloss_enabled=True).config_hash()
    assert cfg.config_hash() != ScenarioConfig().config_hash()
    with pytest.raises(ConfigurationError):
        ScenarioConfig.from_mapping({"nonsense": "1"})
    with pytest.raises(ConfigurationError):
        ScenarioConfig.from_mapping({"rho": "abc"})


def test_power_levels():
    np.testing.assert_allclose(power_levels(5.0, 1.0), [0, 1, 2, 3, 4, 5])
    np.testing.assert_allclose(power_levels(5.0, 2.0), [0, 2, 4, 5])
    assert len(power_levels(5.0, 0.2)) == 26
    assert ScenarioConfig(power_step=0.2).chi_q == 25


def test_draws_deterministic():
    cfg = ScenarioConfig(n_users=3, n_channels=6)
    assert draw_channels(cfg, make_rng(11)) == draw_channels(cfg, make_rng(11))
    assert draw_channels(cfg, make_rng(11)) != draw_channels(cfg, make_rng(12))
    assert draw_channels(cfg, make_rng(11, 1)) != draw_channels(cfg, make_rng(11, 2))


@pytest.mark.parametrize("lam", [1.0, 2.0])
def test_exponential_power_mean(lam):
    cfg = ScenarioConfig(n_users=10, n_channels=10, lambda_rate=lam)
    rng = make_rng(5)
    g = np.concatenate([draw_channels(cfg, rng).g_c.ravel() for _ in range(1000)])
    assert g.size == 100_000
    assert abs(g.mean() - 1 / lam) < 3 * g.std() / np.sqrt(g.size)


def test_pathloss_scales_whole_user_row():
    cfg = ScenarioConfig(n_users=2, n_channels=5, pathloss_enabled=True)
    ch = draw_channels(cfg, make_rng(3))
    assert ch.positions.shape == (3, 2)
    plain = draw_channels(cfg.replace(pathloss_enabled=False), make_rng(3))
    ratio = ch.g_c / plain.g_c
    np.testing.assert_allclose(ratio, ratio[:, :1] * np.ones((1, 5)), rtol=1e-12)
    assert (ratio <= 1.0 + 1e-12).all()


def test_channel_csv_roundtrip(tmp_path):
    ch = ChannelState(np.array([[1.0, 0.5, 2.0]]), np.array([[0.25, 1.5, 3.0]]))
    ch.to_csv(tmp_path / "ch.csv")
    assert ChannelState.from_csv(tmp_path / "ch.csv") == ch
    text = (tmp_path / "ch.csv").read_bytes()
    assert b"\r" not in text and text.startswith(b"user,channel,h_c,h_j\n")


def test_channel_rejects_negative_and_shape():
    with pytest.raises(ConfigurationError):
        ChannelState(np.array([[-1.0]]), np.array([[1.0]]))
    with pytest.raises(ConfigurationError):
        ChannelState(np.ones((1, 2)), np.ones((2, 1)))


def test_trp_examples():
    ch = ChannelState(np.sqrt([[1.0, 9.0], [9.0, 0.5]]), np.ones((2, 2)))
    alloc = Allocation.from_powers(victim=1, comm=(0, 1), powers=[2.0, 4.0], p_bar=10.0)
    assert trp_at_ap(alloc, ch, [1, 1]) == pytest.approx(11.0)
    assert trp_at_ap(alloc, ch, [0, 0]) == 0.0
    full = Allocation.from_powers(1, (0, 1), [10.0, 4.0], 10.0)
    assert trp_at_ap(full, ch, [1, 0]) == 0.0


def test_sensed_spectrum_examples():
    ch = ChannelState(np.ones((2, 3)), np.array([[0.5, 1.0, 1.0], [0.25, 1.0, 1.0]]))
    alloc = Allocation(0, (1, 2), np.array([1.0, 2.0]), np.array([1.0, 1.0]))
    assert sensed_spectrum(alloc, ch)[0] == pytest.approx(1.0)
    one = ChannelState(np.ones((1, 2)), np.array([[1.0, 0.5]]))
    s = sensed_spectrum(Allocation(0, (1,), np.array([0.0]), np.array([2.0])), one)
    np.testing.assert_allclose(s, [0.0, 1.0])


def test_shared_comm_channel_adds_in_power():
    ch = ChannelState(np.ones((2, 3)), np.ones((2, 3)))
    alloc = Allocation(0, (1, 1), np.zeros(2), np.array([1.0, 2.0]))
    assert sensed_spectrum(alloc, ch)[1] == pytest.approx(5.0)
    np.testing.assert_array_equal(interference_free((1, 1), 0), [0, 0])
    np.testing.assert_array_equal(interference_free((1, 2), 2), [1, 0])


def test_allocation_invariants():
    cfg = ScenarioConfig(n_channels=3)
    alloc = Allocation.from_powers(0, (1,), [2.0], 10.0)
    assert alloc.violations(cfg) == []
    assert alloc.deceive_power + alloc.comm_power == pytest.approx([10.0])
    assert Allocation.from_powers(1, (1,), [6.0], 10.0).violations(cfg) == [
        "deception power [6.] exceeds rho=5.0", "victim channel is also a communication channel"]
    with pytest.raises(ConfigurationError):
        Allocation(0, (1, 2), np.ones(1), np.ones(1))


def test_upsilon_top_examples():
    ch = ChannelState.from_power_gains([[1.0, 4.0, 2.0]], [[1.0, 1.0, 1.0]])
    assert upsilon_top(ch, ScenarioConfig(n_channels=3)) == pytest.approx(40.0)
    assert upsilon_top(ChannelState.uniform(3, 4, 2.0), ScenarioConfig(n_users=3)) == pytest.approx(120.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(amps, amps), min_size=1, max_size=6))
def test_coherent_victim_at_least_incoherent(pairs):
    d = np.array([p[0] for p in pairs])
    h = np.array([p[1] for p in pairs])
    n = len(pairs)
    ch = ChannelState(np.ones((n, n + 1)), np.column_stack([h, np.ones((n, n))]))
    alloc = Allocation(0, tuple(range(1, n + 1)), d, np.zeros(n))
    coherent = sensed_spectrum(alloc, ch)[0]
    assert coherent >= np.sum(d**2 * h**2) * (1 - 1e-12) - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=4), st.integers(0, 3), st.floats(0.0, 1.0))
def test_trp_nonincreasing_in_deception(powers, user, extra):
    n = len(powers)
    user %= n
    ch = ChannelState(np.full((n, n + 1), 1.3), np.ones((n, n + 1)))
    comm = tuple(range(1, n + 1))
    base = Allocation.from_powers(0, comm, powers, 10.0)
    more = np.array(powers)
    more[user] = min(10.0, more[user] + extra)
    assert trp_at_ap(Allocation.from_powers(0, comm, more, 10.0), ch, [1] * n) <= trp_at_ap(base, ch, [1] * n) + 1e-12
