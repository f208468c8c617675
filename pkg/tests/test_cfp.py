from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import rng_for
from ergmk.cfp import (
    CFPError,
    CFPParams,
    CFPSpace,
    CFPState,
    apply_cfp_event,
    build_cfp_rate_matrix,
    cfp_fast_mixing_check,
    cfp_step,
    graph_marginal,
    initial_state,
    simulate_cfp,
    total_event_rate,
)
from ergmk.exact import solve_stationary
from ergmk.graphs import Graph


def test_params_validation():
    with pytest.raises(CFPError):
        CFPParams(r_m=0.0, r_f=1.0, r_d=1.0, m_foci=2)
    with pytest.raises(CFPError):
        CFPParams(r_m=1.0, r_f=1.0, r_d=1.0)  # no focus structure
    with pytest.raises(CFPError):
        CFPParams(r_m=1.0, r_f=1.0, r_d=1.0, m_foci=2, m_scale=(1.0, 0.5))


def test_m_scaling_rule():
    params = CFPParams(r_m=1.0, r_f=1.0, r_d=1.0, m_scale=(0.5, 0.0))
    assert params.resolve_m(10) == 5  # m = c * n when gamma = 0
    const = CFPParams(r_m=1.0, r_f=1.0, r_d=1.0, m_scale=(4.0, 1.0))
    for n in (10, 20, 40):
        assert const.resolve_m(n) == 4


def test_noop_semantics():
    g = Graph.from_edges(3, False, [(0, 1)])
    state = CFPState(g, (0, 0, 0))
    from ergmk.cfp import CFPEvent

    same = apply_cfp_event(state, CFPEvent("form", 0, 1))
    assert same.graph == g
    same2 = apply_cfp_event(state, CFPEvent("dissolve", 0, 2))
    assert same2.graph == g
    changed = apply_cfp_event(state, CFPEvent("dissolve", 0, 1))
    assert changed.graph._wedges == 0
    moved = apply_cfp_event(state, CFPEvent("migrate", 1, focus=2))
    assert moved.foci == (0, 2, 0)
    assert moved.graph == g


def test_single_focus_density_matches_birth_death():
    params = CFPParams(r_m=1.0, r_f=1.0, r_d=3.0, m_foci=1)
    traj = simulate_cfp(params, 4, False, t_max=4000.0, max_events=10**7, seed=71)
    expected = 1.0 / 4.0  # r_f / (r_f + r_d)
    w = traj.batch_weights / traj.batch_weights.sum()
    se = math.sqrt(
        float((w**2 * (traj.batch_edge_prob - traj.mean_edge_prob) ** 2).sum())
        * len(w)
        / (len(w) - 1)
    )
    assert abs(traj.mean_edge_prob - expected) <= 3.5 * se


def test_single_focus_symmetric_rates_density_half():
    params = CFPParams(r_m=1.0, r_f=2.0, r_d=2.0, m_foci=1)
    traj = simulate_cfp(params, 4, False, t_max=3000.0, max_events=10**7, seed=72)
    assert traj.mean_edge_prob == pytest.approx(0.5, abs=0.02)


def test_single_focus_edge_lifetimes():
    params = CFPParams(r_m=1.0, r_f=1.0, r_d=2.0, m_foci=1)
    traj = simulate_cfp(params, 4, False, t_max=4000.0, max_events=10**7, seed=73)
    mean = float(np.mean(traj.edge_lifetimes))
    se = mean / math.sqrt(len(traj.edge_lifetimes))
    assert abs(mean - 0.5) <= 4.0 * se


def test_single_focus_exact_graph_marginal_is_bernoulli():
    params = CFPParams(r_m=1.0, r_f=1.0, r_d=2.0, m_foci=1)
    space = CFPSpace(3, False, 1)
    pi = solve_stationary(build_cfp_rate_matrix(params, space))
    marg = graph_marginal(pi, space)
    p = 1.0 / 3.0
    for bits in range(8):
        k = bin(bits).count("1")
        assert marg[bits] == pytest.approx(p**k * (1 - p) ** (3 - k), abs=1e-12)


def test_product_space_roundtrip():
    space = CFPSpace(2, True, 3)
    for idx in range(space.size):
        st = space.state(idx)
        assert space.index_of(st) == idx


def test_simulated_occupancy_matches_product_nullspace():
    params = CFPParams(r_m=1.0, r_f=1.0, r_d=1.0, m_foci=2)
    space = CFPSpace(2, False, 2)
    assert space.size == 8
    pi = solve_stationary(build_cfp_rate_matrix(params, space))
    traj = simulate_cfp(params, 2, False, t_max=8000.0, max_events=10**7, seed=74)
    total = sum(traj.occupancy.values())
    emp = np.zeros(space.size)
    for (bits, code), w in traj.occupancy.items():
        emp[space.index(bits, code)] = w / total
    tv = 0.5 * np.abs(emp - pi).sum()
    assert tv <= 0.02


def test_reciprocity_occupancy_matches_product_nullspace():
    params = CFPParams(r_m=1.0, r_f=1.0, r_d=1.0, m_foci=2, reciprocity=True)
    space = CFPSpace(2, True, 2)
    assert space.size == 16
    pi = solve_stationary(build_cfp_rate_matrix(params, space))
    traj = simulate_cfp(params, 2, True, t_max=15000.0, max_events=10**7, seed=75)
    total = sum(traj.occupancy.values())
    emp = np.zeros(space.size)
    for (bits, code), w in traj.occupancy.items():
        emp[space.index(bits, code)] = w / total
    tv = 0.5 * np.abs(emp - pi).sum()
    assert tv <= 0.02


def test_reference_step_reaches_same_equilibrium():
    # the single-step surface (cfp_step/apply) and the fast runner are
    # independent implementations of the same process
    params = CFPParams(r_m=1.0, r_f=1.0, r_d=1.0, m_foci=2)
    space = CFPSpace(2, False, 2)
    pi = solve_stationary(build_cfp_rate_matrix(params, space))
    rng = rng_for(76)
    state = initial_state(params, 2, False, rng)
    occ = np.zeros(space.size)
    for _ in range(60_000):
        dt, event = cfp_step(state, params, rng)
        occ[space.index_of(state)] += dt
        state = apply_cfp_event(state, event)
    emp = occ / occ.sum()
    assert 0.5 * np.abs(emp - pi).sum() <= 0.02


def test_total_event_rate_matches_stream_sum():
    params = CFPParams(r_m=2.0, r_f=1.5, r_d=0.5, m_foci=2, reciprocity=True)
    g = Graph.from_edges(3, True, [(0, 1), (1, 0), (2, 1)])
    state = CFPState(g, (0, 0, 1))
    # streams: 3 migrations at 2.0; co-located ordered pairs {0,1} -> 2
    # formation candidates plus 3 reverse candidates at 1.5; 6 dissolution
    # variables at 0.5
    assert total_event_rate(state, params) == pytest.approx(
        3 * 2.0 + (2 + 3) * 1.5 + 6 * 0.5
    )


def test_focus_occupancy_uniform():
    params = CFPParams(r_m=1.0, r_f=0.5, r_d=0.5, m_foci=3)
    traj = simulate_cfp(params, 5, False, t_max=4000.0, max_events=10**7, seed=77)
    assert traj.focus_occupancy.shape == (5, 3)
    assert np.abs(traj.focus_occupancy.sum(axis=1) - 1.0).max() < 1e-9
    assert np.abs(traj.focus_occupancy - 1.0 / 3.0).max() < 0.05


def test_fast_mixing_limit_small():
    params = CFPParams(r_m=1000.0, r_f=1.0, r_d=1.0, m_foci=10)
    report = cfp_fast_mixing_check(params, n=10, horizon=120.0, seed=78)
    assert report.predicted_edge_prob == pytest.approx(1.0 / 11.0)
    assert not report.flagged, report.to_dict()


def test_fast_mixing_requires_ratio():
    params = CFPParams(r_m=1.0, r_f=1.0, r_d=1.0, m_foci=5)
    with pytest.raises(CFPError):
        cfp_fast_mixing_check(params, n=6, horizon=10.0)


def test_slow_mixing_negative_control_is_flagged():
    params = CFPParams(r_m=1e-3, r_f=1.0, r_d=1.0, m_foci=10)
    report = cfp_fast_mixing_check(
        params, n=10, horizon=2000.0, seed=79, allow_slow=True
    )
    assert report.flagged


def test_mean_degree_scales_linearly_when_foci_fixed():
    params = CFPParams(r_m=1000.0, r_f=1.0, r_d=1.0, m_scale=(5.0, 1.0))
    degrees = {}
    for n in (10, 20, 40):
        report = cfp_fast_mixing_check(params, n=n, horizon=30.0, seed=80 + n)
        assert not report.flagged, (n, report.to_dict())
        degrees[n] = report.observed_edge_prob * (n - 1)
    assert degrees[20] / degrees[10] == pytest.approx(2.0, rel=0.25)
    assert degrees[40] / degrees[20] == pytest.approx(2.0, rel=0.25)


def test_reciprocity_raises_arc_probability():
    params = CFPParams(r_m=50.0, r_f=1.0, r_d=1.0, m_foci=3, reciprocity=True)
    traj = simulate_cfp(params, 6, True, t_max=1500.0, max_events=10**7, seed=81)
    m_vars = 30
    p_given_present = 2.0 * traj.mean_mutual_count / traj.mean_edge_count
    p_given_absent = (traj.mean_edge_count - 2.0 * traj.mean_mutual_count) / (
        m_vars - traj.mean_edge_count
    )
    assert p_given_present > p_given_absent


def test_fast_mixing_reciprocity_conditionals():
    params = CFPParams(r_m=2000.0, r_f=1.0, r_d=1.0, m_foci=8, reciprocity=True)
    report = cfp_fast_mixing_check(params, n=8, horizon=120.0, seed=82)
    rc = report.reciprocity
    assert rc is not None
    assert not rc.flagged, report.to_dict()
    assert rc.observed_given_present > rc.observed_given_absent
