from __future__ import annotations

import io
import json
import math

import numpy as np
import pytest
from scipy import stats as sps

from conftest import random_graph, rng_for
from ergmk.engine import (
    AbsorbingStateError,
    RecordMode,
    SimConfig,
    _RateCache,
    batch_mean_se,
    ensemble,
    replicate_config,
    simulate,
    step,
    write_event_log,
)
from ergmk.exact import StateSpace, build_rate_matrix, solve_stationary
from ergmk.graphs import Graph, Toggle, all_toggles
from ergmk.potentials import potential_spec
from ergmk.processes import Family, ProcessSpec, rate_vector
from test_processes import make_process

EDGES0 = potential_spec(["edges"], [0.0])


def lergm(theta=0.5, A=1.0, terms=("edges",)):
    return ProcessSpec(
        Family.LERGM,
        potential=potential_spec(list(terms), [theta] if len(terms) == 1 else theta),
        rate_constant=A,
    )


def test_step_uniform_case_statistics():
    spec = ProcessSpec(Family.DIFFERENTIAL_STABILITY, potential=EDGES0, rate_constant=1.0)
    g = Graph(3, directed=False)
    rng = rng_for(61)
    n_draws = 4000
    dts = np.empty(n_draws)
    counts = {t: 0 for t in all_toggles(3, False)}
    for k in range(n_draws):
        dt, tog = step(spec, g, rng)
        dts[k] = dt
        counts[tog] += 1
    assert dts.mean() == pytest.approx(1.0, abs=3.5 / math.sqrt(n_draws))
    for c in counts.values():
        p = 1.0 / 3.0
        se = math.sqrt(p * (1 - p) / n_draws)
        assert c / n_draws == pytest.approx(p, abs=3.5 * se)


def test_step_deterministic_under_seed():
    spec = lergm(0.8)
    g = Graph.from_edges(3, False, [(0, 1)])
    seq1 = [step(spec, g, rng_for(62)) for _ in range(1)]
    out1 = []
    rng = rng_for(62)
    for _ in range(20):
        out1.append(step(spec, g, rng))
    rng = rng_for(62)
    out2 = [step(spec, g, rng) for _ in range(20)]
    assert out1 == out2
    assert seq1[0] == out1[0]


def test_step_toggle_frequencies_match_rate_ratios():
    spec = lergm(1.0)
    g = Graph.from_edges(3, False, [(0, 1)])
    rates = rate_vector(spec, g)
    probs = rates / rates.sum()
    rng = rng_for(63)
    n_draws = 100_000
    counts = np.zeros(len(rates))
    for _ in range(n_draws):
        _, tog = step(spec, g, rng)
        counts[all_toggles(3, False).index(tog)] += 1
    freqs = counts / n_draws
    for f, p in zip(freqs, probs):
        se = math.sqrt(p * (1 - p) / n_draws)
        assert abs(f - p) <= 3.0 * se


def test_step_raises_on_absorbing_state():
    spec = ProcessSpec(
        Family.CONST_DISS_CSTERGM,
        formation_potential=potential_spec(["edges"], [-800.0]),
        theta_d=-800.0,
    )
    g = Graph.complete(3, directed=False)
    with pytest.raises(AbsorbingStateError):
        step(spec, g, rng_for(64))


def test_simulate_zero_events():
    config = SimConfig(lergm(), Graph(3, directed=False), t_max=10.0, max_events=0, seed=1)
    traj = simulate(config)
    assert traj.events == []
    assert traj.final == traj.initial
    assert traj.status == "max_events"


def test_simulate_absorbing_status():
    spec = ProcessSpec(
        Family.CONST_DISS_CSTERGM,
        formation_potential=potential_spec(["edges"], [-800.0]),
        theta_d=-800.0,
    )
    config = SimConfig(spec, Graph.complete(3, False), t_max=5.0, max_events=100, seed=2)
    traj = simulate(config)
    assert traj.status == "absorbing"
    assert traj.n_events == 0
    assert traj.sim_time == 5.0  # state exposed through t_max


def test_simulate_time_average_density_uniform_equilibrium():
    spec = ProcessSpec(
        Family.CONST_DISS_CSTERGM,
        formation_potential=potential_spec(["edges"], [0.0]),
        theta_d=0.0,
    )
    config = SimConfig(
        spec,
        Graph(4, directed=False),
        t_max=3000.0,
        max_events=200_000,
        seed=3,
        burn_in=20.0,
    )
    traj = simulate(config)
    assert traj.status == "t_max"
    mean, se = batch_mean_se(traj.batch_weights, traj.batch_stats)
    density = mean[0] / 6.0
    assert abs(density - 0.5) <= 3.0 * se[0] / 6.0 + 1e-9


def test_simulate_edge_lifetimes_constant_dissolution():
    spec = ProcessSpec(
        Family.CONST_DISS_CSTERGM,
        formation_potential=potential_spec(["edges"], [0.0]),
        theta_d=math.log(2.0),
    )
    config = SimConfig(spec, Graph(4, directed=False), t_max=3000.0, max_events=10**7, seed=4)
    traj = simulate(config)
    assert len(traj.edge_lifetimes) >= 10_000
    assert np.mean(traj.edge_lifetimes) == pytest.approx(0.5, rel=0.05)


def test_simulate_deterministic_and_replayable():
    spec = make_process(Family.GENERAL_CSTERGM, rng_for(65), False)
    init = random_graph(rng_for(66), 4, False)
    config = SimConfig(
        spec, init, t_max=50.0, max_events=5000, seed=7, record=RecordMode.FULL_EVENTS
    )
    t1 = simulate(config)
    t2 = simulate(config)
    assert t1.events == t2.events
    assert t1.final == t2.final
    assert np.array_equal(t1.time_averaged_stats, t2.time_averaged_stats)
    assert t1.replay_final() == t1.final
    times = [t for t, _ in t1.events]
    assert all(a < b for a, b in zip(times, times[1:]))


def test_event_log_format_and_determinism():
    config = SimConfig(
        lergm(0.3),
        Graph(3, directed=False),
        t_max=20.0,
        max_events=500,
        seed=8,
        record=RecordMode.FULL_EVENTS,
    )
    bufs = []
    for _ in range(2):
        traj = simulate(config)
        buf = io.StringIO()
        write_event_log(traj, buf)
        bufs.append(buf.getvalue())
    assert bufs[0] == bufs[1]
    first = json.loads(bufs[0].splitlines()[0])
    assert set(first) == {"t", "i", "j", "add"}
    # the add flags replay correctly: adding iff edge absent beforehand
    g = Graph(3, directed=False)
    for line in bufs[0].splitlines():
        rec = json.loads(line)
        assert rec["add"] == (not g.has_edge(rec["i"], rec["j"]))
        g._flip(rec["i"], rec["j"])


def test_record_modes():
    base = dict(t_max=10.0, max_events=200, seed=9)
    full = simulate(SimConfig(lergm(), Graph(3, False), record=RecordMode.FULL_EVENTS, **base))
    stats_only = simulate(
        SimConfig(lergm(), Graph(3, False), record=RecordMode.STATISTICS_ONLY, **base)
    )
    averages = simulate(
        SimConfig(lergm(), Graph(3, False), record=RecordMode.TIME_AVERAGES, **base)
    )
    assert len(full.events) == full.n_events > 0
    assert stats_only.events == [] and len(stats_only.stat_snapshots) == stats_only.n_events
    assert averages.events == [] and averages.stat_snapshots is None
    # the summary statistics agree regardless of recording mode
    assert np.array_equal(full.time_averaged_stats, averages.time_averaged_stats)


def test_ensemble_reproducible_and_consistent():
    config = SimConfig(lergm(0.4), Graph(3, False), t_max=5.0, max_events=400, seed=10,
                       record=RecordMode.FULL_EVENTS)
    batch1 = ensemble(config, 3)
    batch2 = ensemble(config, 3)
    for a, b in zip(batch1, batch2):
        assert a.events == b.events
    solo = simulate(replicate_config(config, 1))
    assert solo.events == batch1[1].events
    # replicates are genuinely different runs
    assert batch1[0].events != batch1[1].events


def test_ensemble_workers_match_sequential():
    config = SimConfig(lergm(0.4), Graph(3, False), t_max=5.0, max_events=400, seed=11,
                       record=RecordMode.FULL_EVENTS)
    seq = ensemble(config, 4, workers=1)
    par = ensemble(config, 4, workers=3)
    for a, b in zip(seq, par):
        assert a.events == b.events


def test_ensemble_grand_average_density():
    spec = ProcessSpec(
        Family.CONST_DISS_CSTERGM, formation_potential=potential_spec(["edges"], [0.0]),
        theta_d=0.0,
    )
    config = SimConfig(spec, Graph(4, False), t_max=60.0, max_events=10**6, seed=12,
                       burn_in=5.0)
    trajs = ensemble(config, 100)
    densities = np.array([t.time_averaged_stats[0] / 6.0 for t in trajs])
    se = densities.std(ddof=1) / math.sqrt(len(densities))
    assert abs(densities.mean() - 0.5) <= 3.0 * se


def test_dwell_times_are_exponential():
    spec = lergm(theta=[0.4, 0.5], terms=("edges", "triangles"))
    config = SimConfig(
        spec, Graph(3, False), t_max=math.inf, max_events=20_000, seed=13,
        record=RecordMode.FULL_EVENTS,
    )
    traj = simulate(config)
    # reconstruct per-state holding times from the event log
    bits = traj.initial.to_bits()
    t_prev = 0.0
    holds: dict[int, list[float]] = {}
    g = traj.initial.copy()
    toggles = all_toggles(3, False)
    for t, tog in traj.events:
        holds.setdefault(bits, []).append(t - t_prev)
        k = toggles.index(Toggle(min(tog.i, tog.j), max(tog.i, tog.j)))
        bits ^= 1 << k
        t_prev = t
    state, samples = max(holds.items(), key=lambda kv: len(kv[1]))
    gstate = Graph.from_bits(3, False, state)
    exit_rate = float(rate_vector(spec, gstate).sum())
    result = sps.kstest(samples, "expon", args=(0.0, 1.0 / exit_rate))
    assert result.pvalue > 1e-3


@pytest.mark.parametrize("fam", list(Family))
def test_occupancy_matches_exact_stationary(fam):
    directed = fam is Family.COMPETING_RATE_SAOM
    rng = rng_for(100 + list(Family).index(fam))
    spec = make_process(fam, rng, directed)
    max_events = 200_000 if directed else 80_000
    config = SimConfig(
        spec, Graph(3, directed), t_max=math.inf, max_events=max_events, seed=14
    )
    traj = simulate(config)
    space = StateSpace(3, directed)
    pi = solve_stationary(build_rate_matrix(spec, space))
    total = sum(traj.occupancy.values())
    emp = np.array([traj.occupancy.get(s, 0.0) / total for s in range(space.size)])
    tv = 0.5 * np.abs(emp - pi).sum()
    assert tv < 0.02, (fam, tv)


def test_rate_cache_incremental_matches_full():
    rng = rng_for(77)
    for fam in Family:
        directed = fam is Family.COMPETING_RATE_SAOM
        spec = make_process(fam, rng, directed)
        g = random_graph(rng, 4, directed)
        cache = _RateCache(spec, g.copy())
        m = cache.m
        for _ in range(300):
            idx = int(rng.integers(m))
            cache.apply(idx)
            fresh = rate_vector(spec, cache.g)
            scale = max(1.0, float(fresh.max()))
            assert np.abs(cache.rates - fresh).max() <= 1e-9 * scale, fam


def test_simulate_audit_interval_runs_clean():
    for fam in Family:
        directed = fam is Family.COMPETING_RATE_SAOM
        spec = make_process(fam, rng_for(88), directed)
        config = SimConfig(
            spec, Graph(3, directed), t_max=math.inf, max_events=2000, seed=15,
            audit_interval=100, audit_tol=1e-9,
        )
        simulate(config)  # raises RateCacheError on drift


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(lergm(), Graph(3, False), t_max=0.0, max_events=0, seed=1)
    with pytest.raises(ValueError):
        SimConfig(lergm(), Graph(3, False), t_max=5.0, max_events=10, seed=1, burn_in=5.0)


def test_mean_dwell_by_state_consistency():
    config = SimConfig(lergm(0.6), Graph(3, False), t_max=200.0, max_events=10**6, seed=16)
    traj = simulate(config)
    spec = lergm(0.6)
    for bits, (total, count) in traj.mean_dwell_by_state.items():
        if count < 200:
            continue
        g = Graph.from_bits(3, False, bits)
        expected = 1.0 / float(rate_vector(spec, g).sum())
        assert total / count == pytest.approx(expected, rel=0.25)
