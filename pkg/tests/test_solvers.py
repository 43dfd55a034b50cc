import itertools
import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blindbeam.channel import ChannelModelParams, expected_channel_power, virtual_direct
from blindbeam.measurement import (ConditionalMeanTable, MeasurementSession, SampleSet,
                                   collect_random_samples, conditional_means)
from blindbeam.phases import PhaseConfig, grid_angles, wrap_angle
from blindbeam.solvers import (ExactTables, alternating_csm, alternating_csm_oracle,
                               beam_training, cpp, csm, csm_oracle, detect_los, exhaustive, gcsm,
                               gcsm_oracle, split_groups, zps)

from conftest import FIG2_H, complex_gaussian, random_params


def brute_force(params, K):
    """Lexicographically first maximizer by full enumeration."""
    best, arg = -np.inf, None
    for idx in itertools.product(range(K), repeat=params.n_elements):
        v = expected_channel_power(params, PhaseConfig(idx, K))
        if v > best:
            best, arg = v, idx
    return PhaseConfig(arg, K), best


def static_with_offsets(offsets, amp=0.1):
    """Static channel with h0 = 1 and the given phase offsets angle(h0 * conj(hn))."""
    return ChannelModelParams.from_static(0.5, amp * np.exp(-1j * np.asarray(offsets)))


# ---------------------------------------------------------------- baselines

@pytest.mark.parametrize("n,K", [(4, 2), (0, 4), (3, 4)])
def test_zps(n, K):
    c = zps(n, K)
    assert c.n == n and np.all(c.indices == 0)


def test_beam_training_toy(toy_samples):
    rep = beam_training(toy_samples)
    assert rep.config.indices.tolist() == [1, 0, 1, 1]
    assert rep.diagnostics["best_t"] == 3
    assert rep.diagnostics["best_reading"] == 3.3
    assert rep.queries_used == 6


def test_beam_training_ties_pick_first():
    th = np.random.default_rng(0).integers(0, 4, (5, 3))
    rep = beam_training(SampleSet.from_records(th, np.ones(5), 4))
    assert rep.diagnostics["best_t"] == 0


def test_beam_training_finds_optimum_when_sampled():
    p = ChannelModelParams.from_static(0.1, complex_gaussian(np.random.default_rng(1), 4, 0.1))
    opt, _ = exhaustive(p, 4)
    th = np.vstack([np.random.default_rng(2).integers(0, 4, (20, 4)), opt.indices])
    readings = [expected_channel_power(p, PhaseConfig(r, 4)) for r in th]
    rep = beam_training(SampleSet.from_records(th, readings, 4))
    assert readings[rep.diagnostics["best_t"]] >= max(readings)


def test_beam_training_empty():
    with pytest.raises(ValueError):
        beam_training(SampleSet.from_records(np.zeros((0, 2), dtype=int), [], 4))


# ---------------------------------------------------------------- known-CSI oracles

def test_cpp_zero_offsets():
    assert np.all(cpp(static_with_offsets(np.zeros(5)), 4).indices == 0)


def test_cpp_nearest_grid_point():
    assert cpp(static_with_offsets([np.pi / 3]), 4).indices.tolist() == [1]


def test_cpp_tie_goes_to_smaller_index():
    # offset pi/4 sits exactly between indices 0 and 1 for K = 4
    p = static_with_offsets([np.pi / 4, -np.pi / 4])
    assert cpp(p, 4).indices.tolist() == [0, 0]


def test_cpp_example1_collapse():
    eps = 1e-3
    offsets = [np.pi / 2 - eps] * 3 + [-np.pi / 2 + eps] * 3
    p = ChannelModelParams.from_static(1e-6, 0.1 * np.exp(-1j * np.asarray(offsets)))
    c = cpp(p, 2)
    assert np.all(c.indices == 0)
    _, f_star = exhaustive(p, 2)
    assert expected_channel_power(p, c) < 1e-3 * f_star


@pytest.mark.parametrize("K", [2, 3, 4])
def test_exhaustive_matches_brute_force(K):
    rng = np.random.default_rng(K)
    p = random_params(rng, 5)
    cfg, f = exhaustive(p, K)
    bf_cfg, bf = brute_force(p, K)
    assert cfg == bf_cfg
    assert f == pytest.approx(bf, rel=1e-12)


def test_exhaustive_fig2_k2(fig2_params):
    cfg, f = exhaustive(fig2_params, 2)
    bf_cfg, bf = brute_force(fig2_params, 2)
    assert cfg == bf_cfg == PhaseConfig([0, 1, 0, 1], 2)
    assert f == pytest.approx(bf, rel=1e-12)
    assert f == pytest.approx(86.76855625e-10, rel=1e-9)


def test_exhaustive_single_element_matches_cpp():
    for off in np.linspace(-3, 3, 13):
        p = static_with_offsets([off])
        assert exhaustive(p, 4)[0] == cpp(p, 4)


def test_exhaustive_budget():
    p = random_params(np.random.default_rng(0), 13)
    with pytest.raises(ValueError, match="budget"):
        exhaustive(p, 4)
    with pytest.raises(ValueError):
        exhaustive(random_params(np.random.default_rng(0), 3), 4, budget=63)


def test_exhaustive_large_instance_chunks():
    # 4**10 configurations exercise the high/low split with several high digits
    rng = np.random.default_rng(3)
    p = ChannelModelParams.from_static(0.2, complex_gaussian(rng, 10, 0.1))
    cfg, f = exhaustive(p, 4)
    assert f == pytest.approx(expected_channel_power(p, cfg), rel=1e-12)
    for _ in range(200):
        assert expected_channel_power(p, PhaseConfig.random(10, 4, rng)) <= f * (1 + 1e-12)


def _instance(rng, n, direct_scale=1.0):
    return ChannelModelParams.from_static(complex_gaussian(rng, 1, 0.1 * direct_scale)[0],
                                          complex_gaussian(rng, n, 0.1))


@pytest.mark.parametrize("K", [2, 3, 4, 8])
def test_cpp_approximation_bound(K):
    rng = np.random.default_rng(100 + K)
    for _ in range(30):
        p = _instance(rng, 5)
        _, f = exhaustive(p, K)
        v = expected_channel_power(p, cpp(p, K))
        assert np.cos(np.pi / K) ** 2 * f <= v * (1 + 1e-12) and v <= f * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), c=st.floats(1e-2, 1e2), rot=st.floats(-np.pi, np.pi))
def test_argmax_invariances(seed, c, rot):
    rng = np.random.default_rng(seed)
    h0, h = complex_gaussian(rng, 1, 0.05)[0], complex_gaussian(rng, 5, 0.05)
    p = ChannelModelParams.from_static(h0, h)
    u = np.exp(1j * rot)
    q = ChannelModelParams.from_static(np.sqrt(c) * u * h0, np.sqrt(c) * u * h)
    for K in (3, 4):
        a, fa = exhaustive(p, K)
        b, fb = exhaustive(q, K)
        assert fb == pytest.approx(c * fa, rel=1e-9)
        # the maximum is unique up to floating-point ties
        assert expected_channel_power(p, b) == pytest.approx(fa, rel=1e-9)
        assert expected_channel_power(q, cpp(p, K)) == pytest.approx(
            expected_channel_power(q, cpp(q, K)), rel=1e-9)
        assert csm_oracle(p, K).config == cpp(p, K) or np.any(
            np.isclose(np.abs(wrap_angle(p.phase_offsets[:, None] - grid_angles(K)[None, :])),
                       np.pi / K, atol=1e-9))


# ---------------------------------------------------------------- CSM

def test_csm_toy(toy_samples):
    rep = csm(conditional_means(toy_samples))
    assert rep.config.indices.tolist() == [1, 0, 1, 0]
    assert rep.queries_used == 6


def test_csm_strict_row_maxima():
    means = np.array([[0.0, 3.0, 1.0], [5.0, 1.0, 2.0]])
    t = ConditionalMeanTable.from_exact([0, 1], means, PhaseConfig.zeros(2, 3))
    assert csm(t).config.indices.tolist() == [1, 0]


def test_csm_ties_logged_and_break_low(caplog):
    means = np.array([[1.0, 2.0, 2.0], [0.5, 0.5, 0.5]])
    t = ConditionalMeanTable.from_exact([0, 1], means, PhaseConfig.zeros(2, 3))
    with caplog.at_level(logging.DEBUG):
        rep = csm(t)
    assert rep.config.indices.tolist() == [1, 0]
    assert rep.diagnostics["ties"] == [0, 1]
    assert "ties" in caplog.text


def test_csm_keeps_fixed_elements():
    means = np.array([[0.0, 1.0, 0.0, 0.0]])
    t = ConditionalMeanTable.from_exact([2], means, PhaseConfig([3, 2, 0], 4))
    assert csm(t).config.indices.tolist() == [3, 2, 1]


def test_csm_undefined_cells_lose():
    th = np.array([[0, 0], [0, 1], [1, 1]])
    t = conditional_means(SampleSet.from_records(th, [0.1, 0.2, 0.3], 3))
    assert csm(t).config.indices.tolist() == [1, 1]


def test_exact_csm_static_los_equals_cpp():
    rng = np.random.default_rng(7)
    for _ in range(20):
        p = _instance(rng, 8)
        rep = csm(ExactTables(p, 4)(range(8), PhaseConfig.zeros(8, 4)))
        assert rep.config == cpp(p, 4)


def test_csm_oracle_los_preset_equals_cpp():
    from blindbeam.bench import Scenario, build_trial
    sc = Scenario.preset("los-default").replace(N=32)
    for trial in range(5):
        p = build_trial(sc, trial).users[0]
        for K in (3, 4, 8):
            assert csm_oracle(p, K).config == cpp(p, K)


def test_csm_oracle_nlos_degenerate():
    p = random_params(np.random.default_rng(8), 10, direct_rician=0.0)
    rep = csm_oracle(p, 4, 0.1, 1e-12)
    assert rep.diagnostics["degenerate"] is True
    assert np.all(rep.config.indices == 0)
    assert rep.diagnostics["spread"] == [0.0] * 10


def test_csm_oracle_single_element_on_grid():
    for k in range(4):
        p = static_with_offsets([grid_angles(4)[k]])
        assert csm_oracle(p, 4).config.indices.tolist() == [k]


def test_solver_report_json(toy_samples):
    rep = csm(conditional_means(toy_samples))
    doc = json.loads(rep.to_json())
    assert doc["algorithm"] == "csm" and doc["config"] == [1, 0, 1, 0]
    assert doc["queries_used"] == 6 and doc["K"] == 2
    assert len(doc["diagnostics"]["spread"]) == 4


# ---------------------------------------------------------------- grouping

def test_split_groups_ties_go_to_second_group():
    t = ConditionalMeanTable.from_exact([0, 1], np.ones((2, 4)), PhaseConfig.zeros(2, 4))
    assert split_groups(t, PhaseConfig([1, 2], 4), 4) == ((0, 1), ())


def test_split_groups_by_neighbour_comparison():
    # element 0: lower neighbour 3.0 > upper 2.0; element 1: lower 2.0 < upper 2.5
    means = np.array([[3.0, 4.0, 2.0, 1.0], [1.0, 2.0, 3.0, 2.5]])
    t = ConditionalMeanTable.from_exact([0, 1], means, PhaseConfig.zeros(2, 4))
    assert split_groups(t, PhaseConfig([1, 2], 4), 4) == ((0,), (1,))


def test_split_groups_wraps_modulo_k():
    means = np.array([[5.0, 1.0, 0.0, 2.0]])
    t = ConditionalMeanTable.from_exact([0], means, PhaseConfig.zeros(1, 4))
    # phi = 0: lower neighbour is index 3 (2.0), upper is index 1 (1.0)
    assert split_groups(t, PhaseConfig([0], 4), 4) == ((0,), ())


def test_split_groups_k2_random(caplog):
    t = ConditionalMeanTable.from_exact(range(20), np.ones((20, 2)), PhaseConfig.zeros(20, 2))
    with pytest.raises(ValueError):
        split_groups(t, PhaseConfig.zeros(20, 2), 2)
    with caplog.at_level(logging.INFO):
        s2, s3 = split_groups(t, PhaseConfig.zeros(20, 2), 2, np.random.default_rng(0))
    assert sorted(s2 + s3) == list(range(20)) and s2 and s3
    assert "K = 2" in caplog.text


def test_split_matches_geometric_sector_side():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(50):
        p = ChannelModelParams.from_static(0.0, complex_gaussian(rng, 6, 0.1))
        s1 = sorted(rng.choice(6, 3, replace=False).tolist())
        rest = [i for i in range(6) if i not in s1]
        src = ExactTables(p, 4)
        table = src(rest, PhaseConfig.zeros(6, 4))
        stage1 = csm(table).config
        s2, s3 = split_groups(table, stage1, 4)
        v1 = virtual_direct(p, PhaseConfig.zeros(6, 4), s1)
        for n in rest:
            # upper sector: rotated phasor sits counter-clockwise of the virtual direct phasor
            alpha = wrap_angle(np.angle(p.mean_reflected[n] * stage1.phasors[n]) - np.angle(v1))
            if abs(alpha) > 1e-9:
                assert (n in s2) == (alpha > 0)
                checked += 1
    assert checked > 100


def _max_gap(p, cfg):
    ang = np.angle(p.mean_reflected * cfg.phasors)
    return np.abs(wrap_angle(ang[:, None] - ang[None, :])).max()


@pytest.mark.parametrize("K", [3, 4, 8])
def test_gcsm_oracle_sector_bound_nlos(K):
    rng = np.random.default_rng(200 + K)
    tested = 0
    for _ in range(200):
        p = ChannelModelParams.from_static(0.0, complex_gaussian(rng, 8, 0.1))
        rep = gcsm_oracle(p, K, rng=rng)
        d = rep.diagnostics
        if abs(d["virtual_stage1"]) == 0 or abs(d["virtual_stage2"]) == 0:
            continue
        tested += 1
        assert _max_gap(p, rep.config) <= 2 * np.pi / K + 1e-9
    assert tested > 150


def test_gcsm_oracle_nlos_example():
    rng = np.random.default_rng(12)
    p = ChannelModelParams.from_static(0.0, complex_gaussian(rng, 8, 0.1))
    rep = gcsm_oracle(p, 4, rng=rng)
    assert abs(rep.diagnostics["virtual_stage2"]) > 0
    assert _max_gap(p, rep.config) <= np.pi / 2 + 1e-9


def test_gcsm_oracle_partition_invariants():
    rng = np.random.default_rng(13)
    p = random_params(rng, 9, direct_rician=0.0)
    d = gcsm_oracle(p, 4, rng=rng).diagnostics
    s1, s2, s3 = set(d["s1"]), set(d["s2"]), set(d["s3"])
    assert s1 | s2 | s3 == set(range(9))
    assert not (s1 & s2 or s1 & s3 or s2 & s3)
    assert len(s1) == 5


def test_gcsm_oracle_bound_nlos():
    rng = np.random.default_rng(14)
    for _ in range(40):
        p = ChannelModelParams.from_static(0.0, complex_gaussian(rng, 6, 0.1))
        rep = gcsm_oracle(p, 4, rng=rng)
        d = rep.diagnostics
        if abs(d["virtual_stage1"]) == 0 or abs(d["virtual_stage2"]) == 0:
            continue
        _, f = exhaustive(p, 4)
        assert expected_channel_power(p, rep.config) >= 0.5 * f * (1 - 1e-12)


def test_gcsm_fig2_known_values(fig2_params):
    rep = gcsm_oracle(fig2_params, 4, s1=[0, 3])
    assert rep.diagnostics["s2"] == [1] and rep.diagnostics["s3"] == [2]
    assert rep.diagnostics["stage1_config"].indices.tolist() == [0, 1, 3, 0]
    assert expected_channel_power(fig2_params, rep.config) == pytest.approx(83.34279445e-10, rel=1e-9)


def test_alternating_fig2_non_monotone(fig2_params):
    rep = alternating_csm_oracle(fig2_params, 4, ([0, 3], [1, 2]), 4, initial=[0, 1, 3, 1])
    traj = np.array(rep.diagnostics["trajectory"]) * 1e10
    np.testing.assert_allclose(traj, [83.34279445, 78.78730669, 78.78730669, 78.78730669,
                                      78.78730669], rtol=1e-9)
    assert rep.diagnostics["monotone"] is False


def test_alternating_rounds_zero_keeps_initial(fig2_params):
    rep = alternating_csm_oracle(fig2_params, 4, ([0, 3], [1, 2]), 0, initial=[0, 1, 3, 1])
    assert rep.config.indices.tolist() == [0, 1, 3, 1]


def test_alternating_empty_group_is_csm():
    p = random_params(np.random.default_rng(15), 6)
    rep = alternating_csm_oracle(p, 4, ([], range(6)), 1)
    assert rep.config == csm_oracle(p, 4).config


def test_alternating_rejects_overlap():
    p = random_params(np.random.default_rng(16), 4)
    with pytest.raises(ValueError):
        alternating_csm_oracle(p, 4, ([0, 1], [1, 2, 3]), 1)


def test_alternating_sampled_budget():
    p = random_params(np.random.default_rng(17), 6)
    s = MeasurementSession(p, 4, 1.0, 1e-6, rng=0)
    rep = alternating_csm(s, ([0, 1, 2], [3, 4, 5]), 3, 100)
    assert s.query_count == 300 == rep.queries_used
    assert len(rep.diagnostics["trajectory"]) == 4


# ---------------------------------------------------------------- sampled GCSM

def test_gcsm_budget_and_partition():
    p = random_params(np.random.default_rng(18), 10, direct_rician=0.0)
    s = MeasurementSession(p, 4, 1.0, 1e-6, rng=1)
    rep = gcsm(s, 300, 200)
    assert s.query_count == 500 == rep.queries_used
    d = rep.diagnostics
    assert sorted(d["s1"] + d["s2"] + d["s3"]) == list(range(10))


def test_gcsm_deterministic_under_seed():
    p = random_params(np.random.default_rng(19), 10)
    a = gcsm(MeasurementSession(p, 4, 1.0, 1e-6, rng=5), 256, 256)
    b = gcsm(MeasurementSession(p, 4, 1.0, 1e-6, rng=5), 256, 256)
    assert a.config == b.config and a.diagnostics["s1"] == b.diagnostics["s1"]


def test_gcsm_validates():
    s = MeasurementSession(random_params(np.random.default_rng(0), 4), 4, 1.0, 0.0, rng=0)
    with pytest.raises(ValueError):
        gcsm(s, 0, 10)
    with pytest.raises(ValueError):
        gcsm(s, 10, 10, split_ratio=1.0)


def test_gcsm_single_element_falls_back(caplog):
    s = MeasurementSession(random_params(np.random.default_rng(0), 1), 4, 1.0, 0.0, rng=0)
    with caplog.at_level(logging.WARNING):
        rep = gcsm(s, 50, 50)
    assert rep.diagnostics["fallback"] is True and rep.queries_used == 100
    assert "plain CSM" in caplog.text


def test_gcsm_more_groups_uses_sequential_blocks():
    p = random_params(np.random.default_rng(21), 12, direct_rician=0.0)
    s = MeasurementSession(p, 4, 1.0, 1e-6, rng=2)
    rep = gcsm(s, 400, 401, groups=5)
    assert rep.queries_used == 801 == s.query_count
    assert rep.diagnostics["groups"] == 5


def test_gcsm_sampled_approaches_oracle():
    # static, noiseless: enough samples recover the exact-expectation answer
    rng = np.random.default_rng(22)
    h = complex_gaussian(rng, 6, 0.1)
    p = ChannelModelParams.from_static(0.0, h)
    s = MeasurementSession.from_channels(0.0, h, 4)
    rep = gcsm(s, 40_000, 40_000, s1=[0, 2, 4], rng=0)
    ref = gcsm_oracle(p, 4, s1=[0, 2, 4])
    assert rep.config == ref.config


# ---------------------------------------------------------------- LoS detection

def test_detect_identical_values_is_nlos():
    th = np.random.default_rng(0).integers(0, 4, (512, 6))
    v = detect_los(conditional_means(SampleSet.from_records(th, np.full(512, 3.0), 4)), 0.5)
    assert v.status == "NLoS" and v.statistic == 0.0


def test_detect_needs_samples():
    th = np.random.default_rng(0).integers(0, 4, (100, 3))
    t = conditional_means(SampleSet.from_records(th, np.ones(100), 4))
    with pytest.raises(ValueError):
        detect_los(t)
    assert detect_los(t, min_samples=10).status == "NLoS"


def test_detect_rejects_exact_tables():
    t = ConditionalMeanTable.from_exact([0], np.ones((1, 4)), PhaseConfig.zeros(1, 4))
    with pytest.raises(ValueError):
        detect_los(t)
