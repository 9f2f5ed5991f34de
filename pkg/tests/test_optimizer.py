"""Alternating optimization and the three baseline strategies."""

import math

import numpy as np
import pytest

from conftest import draw_channels, make_params, make_task
from mecopt.model import ChannelSet, TaskSpec, evaluate
from mecopt.optimizer import (Scenario, SolverKnobs, solve_fdma,
                              solve_full_offload, solve_joint, solve_local)
from mecopt.oracles import oracle_grid


@pytest.fixture(scope="module")
def reference_scenario():
    rng = np.random.default_rng(11)
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    return Scenario(params=make_params(), tasks=(make_task(), make_task()),
                    channels=cs)


@pytest.fixture(scope="module")
def reference_solutions(reference_scenario):
    sc = reference_scenario
    return {"joint": solve_joint(sc), "full": solve_full_offload(sc),
            "fdma": solve_fdma(sc), "local": solve_local(sc)}


def test_scenario_rejects_count_mismatch():
    rng = np.random.default_rng(40)
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    with pytest.raises(ValueError):
        Scenario(params=make_params(), tasks=(make_task(),), channels=cs)


def test_joint_dominates_both_baselines(reference_solutions):
    joint = reference_solutions["joint"]
    full = reference_solutions["full"]
    fdma = reference_solutions["fdma"]
    assert joint.feasible and full.feasible and fdma.feasible
    assert joint.total_energy_j <= full.total_energy_j + 1e-9
    assert joint.total_energy_j <= fdma.total_energy_j + 1e-9


def test_joint_trace_monotone_nonincreasing(reference_solutions):
    hist = list(reference_solutions["joint"].trace)
    assert len(hist) >= 1
    assert all(b <= a * (1.0 + 1e-9) + 1e-30 for a, b in zip(hist, hist[1:]))


def test_joint_converges_quickly(reference_solutions):
    joint = reference_solutions["joint"]
    assert joint.status == "converged"
    assert joint.iterations <= 20


def test_local_infeasible_under_tight_deadline(reference_solutions):
    # pure local computing needs C L / T = 1.6e10 Hz, cap is 2e9
    local = reference_solutions["local"]
    assert local.status == "infeasible"
    assert not local.feasible
    assert math.isnan(local.total_energy_j)


def test_solution_breakdown_matches_model_evaluate(reference_solutions):
    joint = reference_solutions["joint"]
    sc_bd = joint.breakdown
    params = make_params()
    rng = np.random.default_rng(11)
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    ref = evaluate(cs, joint.precoders, joint.decision,
                   [make_task(), make_task()], params)
    assert sc_bd.total_energy_j == pytest.approx(ref.total_energy_j, rel=1e-9)
    for k in range(2):
        assert sc_bd.rate_bps[k] == pytest.approx(ref.rate_bps[k], rel=1e-9)


def test_dead_channels_force_pure_local():
    cs = ChannelSet(channels=tuple(np.zeros((4, 2), dtype=complex)
                                   for _ in range(2)),
                    decoding_order=(0, 1))
    t8 = make_task(deadline_s=8.0)
    sc = Scenario(params=make_params(), tasks=(t8, t8), channels=cs)
    sol = solve_joint(sc)
    # two users, each eta * C L * (C L / T)^2 with C L = 8e9 cycles
    expect = 2.0 * 1e-32 * 8e9 * (8e9 / 8.0) ** 2
    assert sol.feasible
    assert sol.total_energy_j == pytest.approx(expect, rel=1e-9)
    assert all(b == 0.0 for b in sol.decision.ratios)


def test_local_value_under_loose_deadline():
    cs = ChannelSet(channels=tuple(np.zeros((4, 2), dtype=complex)
                                   for _ in range(2)),
                    decoding_order=(0, 1))
    t8 = make_task(deadline_s=8.0)
    sc = Scenario(params=make_params(), tasks=(t8, t8), channels=cs)
    sol = solve_local(sc)
    assert sol.feasible
    expect = 2.0 * 1e-32 * 8e9 * (1e9) ** 2
    assert sol.total_energy_j == pytest.approx(expect, rel=1e-12)


def test_single_user_fdma_coincides_with_joint():
    rng = np.random.default_rng(5)
    cs = draw_channels(rng, 1, 4, 2, 1e-5)
    sc = Scenario(params=make_params(n_users=1), tasks=(make_task(),),
                  channels=cs)
    joint = solve_joint(sc)
    fdma = solve_fdma(sc)
    assert abs(joint.total_energy_j - fdma.total_energy_j) <= \
        1e-12 * joint.total_energy_j


def test_fdma_symmetric_instance_allocates_identically():
    rng = np.random.default_rng(41)
    h = (rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))) \
        * math.sqrt(1e-5 / 2.0)
    cs = ChannelSet(channels=(h, h.copy()), decoding_order=(0, 1))
    sc = Scenario(params=make_params(), tasks=(make_task(), make_task()),
                  channels=cs)
    sol = solve_fdma(sc)
    assert sol.feasible
    assert sol.decision.ratios[0] == pytest.approx(sol.decision.ratios[1], rel=1e-9)
    assert np.abs(sol.precoders.covariances[0]
                  - sol.precoders.covariances[1]).max() <= 1e-12


def test_cpu_cap_floor_forces_near_full_offloading():
    # a 1 Hz CPU cannot compute anything locally in time, so the optimizer
    # must push every ratio to one and match the full-offload baseline
    rng = np.random.default_rng(42)
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    params = make_params(f_max_hz=1.0)
    sc = Scenario(params=params, tasks=(make_task(), make_task()), channels=cs)
    joint = solve_joint(sc)
    full = solve_full_offload(sc)
    assert joint.feasible
    assert all(b == pytest.approx(1.0, abs=1e-9) for b in joint.decision.ratios)
    assert joint.total_energy_j == pytest.approx(full.total_energy_j, rel=1e-6)


def test_joint_scalar_single_user_matches_exhaustive_grid():
    rng = np.random.default_rng(21)
    for _ in range(4):
        rng.standard_normal((1, 1))
    hj = (rng.standard_normal((1, 1)) + 1j * rng.standard_normal((1, 1))) \
        * math.sqrt(1e-3 / 2.0)
    params = make_params(n_users=1, n_tx=1, n_rx=1, eta=1e-26)
    task = make_task()
    sc = Scenario(params=params, tasks=(task,),
                  channels=ChannelSet(channels=(hj,), decoding_order=(0,)))
    sol = solve_joint(sc)
    a = params.eta * task.total_cycles ** 3 / task.deadline_s ** 2
    floor = max(0.0, 1.0 - params.f_max_hz * task.deadline_s / task.total_cycles)
    inst = {"a": a, "data_bits": 4e7, "deadline_s": 0.5, "bandwidth_hz": 25e6,
            "eps2": params.noise_power_w, "g": abs(hj[0, 0]) ** 2,
            "p_max": 1.0, "floor": floor}
    grid = oracle_grid("joint_single", inst, 1200, stages=4)
    assert sol.feasible
    assert sol.total_energy_j <= grid.value * (1.0 + 1e-3)
    assert abs(sol.total_energy_j - grid.value) / grid.value < 1e-2


def test_knobs_flow_through_scenario():
    rng = np.random.default_rng(43)
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    knobs = SolverKnobs(max_outer_iters=1)
    sc = Scenario(params=make_params(), tasks=(make_task(), make_task()),
                  channels=cs, knobs=knobs)
    sol = solve_joint(sc)
    assert sol.iterations <= 1 or sol.status == "infeasible"
