"""Covariance subproblems: exact eigenmode path, convex refinement, sweeps."""

import math

import numpy as np
import pytest

from conftest import EPS2, NOISE_W_PER_HZ, draw_channels, make_params, make_task
from mecopt import precoding as pc
from mecopt.convex_core import bisect_p61, eigen_decompose, whiten
from mecopt.errors import DeadlineUnreachableError
from mecopt.model import ChannelSet
from mecopt.oracles import oracle_grid


def _scalar_channels(rng, n_users, variance):
    chans = tuple(
        (rng.standard_normal((1, 1)) + 1j * rng.standard_normal((1, 1)))
        * math.sqrt(variance / 2.0)
        for _ in range(n_users))
    return ChannelSet(channels=chans, decoding_order=tuple(range(n_users)))


def test_requirements_reference_operating_point():
    # coeff = 0.9 * 4e7 / 25e6 = 1.44, floor = coeff / 0.5 = 2.88 bit/s/Hz
    params = make_params()
    coeff, floor = pc.offload_requirements(0.9, make_task(), params)
    assert coeff == pytest.approx(1.44, rel=1e-12)
    assert floor == pytest.approx(2.88, rel=1e-12)


def test_requirements_vanish_without_offloading():
    params = make_params()
    assert pc.offload_requirements(0.0, make_task(), params) == (0.0, 0.0)


def test_p51_matches_eigenmode_bisection_exactly():
    rng = np.random.default_rng(30)
    params = make_params()
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    mats = [0.25 * np.eye(2, dtype=complex) for _ in range(2)]
    cov = pc.solve_p51(cs, mats, 0, 1.44, 2.88, params, tol=1e-8)
    q = params.noise_power_w * np.eye(4) + (
        cs.channels[1] @ mats[1] @ cs.channels[1].conj().T)
    eig = eigen_decompose(whiten(q), cs.channels[0])
    res = bisect_p61(eig.singular_values_sq, 1.44, 2.88, 1.0, tol=1e-8)
    v = eig.right_vectors
    ref = (v * res.allocation) @ v.conj().T
    assert np.abs(cov - ref).max() <= 1e-8 * max(1.0, np.abs(ref).max())
    rho = pc._spectral_rate(cs, [cov, mats[1]], 0, params.noise_power_w)
    assert rho >= 2.88 * (1.0 - 1e-6)


def test_p51_zero_requirements_transmit_nothing():
    rng = np.random.default_rng(31)
    params = make_params()
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    mats = [0.25 * np.eye(2, dtype=complex) for _ in range(2)]
    cov = pc.solve_p51(cs, mats, 0, 0.0, 0.0, params)
    assert np.abs(cov).max() == 0.0


def test_p51_unreachable_floor_raises():
    rng = np.random.default_rng(32)
    params = make_params()
    cs = draw_channels(rng, 2, 4, 2, 1e-9)
    mats = [np.zeros((2, 2), dtype=complex) for _ in range(2)]
    with pytest.raises(DeadlineUnreachableError):
        pc.solve_p51(cs, mats, 0, 1.44, 40.0, params)


def test_p52_dead_upstream_channel_reduces_to_exact_path():
    # when the earlier-decoded user has a zero channel its constraints do
    # not couple, so refinement must land on the exact eigenmode solution
    rng = np.random.default_rng(33)
    params = make_params()
    live = draw_channels(rng, 2, 4, 2, 1e-5)
    cs = ChannelSet(channels=(np.zeros((4, 2), dtype=complex), live.channels[1]),
                    decoding_order=(0, 1))
    mats = [np.zeros((2, 2), dtype=complex), 0.25 * np.eye(2, dtype=complex)]
    reqs = [(1.44, 0.0), (1.44, 2.88)]
    cov, _ = pc.solve_p52(cs, mats, 1, reqs, params)
    ref = pc.solve_p51(cs, mats, 1, 1.44, 2.88, params)
    num = pc._partial_energy(cs, [mats[0], cov], 1, reqs, params.noise_power_w)
    den = pc._partial_energy(cs, [mats[0], ref], 1, reqs, params.noise_power_w)
    assert num <= den * (1.0 + 1e-3)


def test_p5_non_offloading_user_transmits_nothing():
    rng = np.random.default_rng(34)
    params = make_params()
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    tasks = [make_task(), make_task()]
    mats = [0.25 * np.eye(2, dtype=complex) for _ in range(2)]
    res = pc.solve_p5(cs, [0.0, 0.9], tasks, params, mats)
    assert np.abs(res.covariances[0]).max() == 0.0
    assert np.trace(res.covariances[1]).real > 0.0


def test_p5_all_local_objective_zero():
    rng = np.random.default_rng(35)
    params = make_params()
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    tasks = [make_task(), make_task()]
    mats = [0.25 * np.eye(2, dtype=complex) for _ in range(2)]
    res = pc.solve_p5(cs, [0.0, 0.0], tasks, params, mats)
    assert res.objective == 0.0


def test_p5_single_user_equals_exact_path():
    rng = np.random.default_rng(36)
    params = make_params(n_users=1)
    cs = draw_channels(rng, 1, 4, 2, 1e-5)
    tasks = [make_task()]
    mats = [0.25 * np.eye(2, dtype=complex)]
    res = pc.solve_p5(cs, [0.9], tasks, params, mats)
    ref = pc.solve_p51(cs, mats, 0, 1.44, 2.88, params, tol=1e-6)
    assert np.abs(res.covariances[0] - ref).max() <= 1e-8


def test_p5_two_user_benchmark_frozen_and_monotone():
    rng = np.random.default_rng(11)
    params = make_params()
    tasks = [make_task(), make_task()]
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    mats = [0.25 * np.eye(2, dtype=complex) for _ in range(2)]
    res = pc.solve_p5(cs, [0.9, 0.9], tasks, params, mats)
    assert res.objective == pytest.approx(1.4056905110695e-08, abs=2e-12)
    hist = list(res.objectives)
    assert all(b <= a * (1.0 + 1e-9) for a, b in zip(hist, hist[1:]))
    assert res.sweeps <= 20
    for k in range(2):
        rho = pc._spectral_rate(cs, res.covariances, k, params.noise_power_w)
        assert rho >= 2.88 * (1.0 - 1e-6)
        assert np.trace(res.covariances[k]).real <= 1.0 + 1e-9


def test_p5_scalar_pair_matches_independent_lattice():
    rng = np.random.default_rng(21)
    params = make_params(n_users=2, n_tx=1, n_rx=1)
    tasks = [make_task(), make_task()]
    cs = _scalar_channels(rng, 2, 1e-3)
    mats = [0.25 * np.eye(1, dtype=complex) for _ in range(2)]
    res = pc.solve_p5(cs, [0.9, 0.9], tasks, params, mats)
    assert res.objective == pytest.approx(2.038175e-09, abs=2e-13)

    s0 = float(np.real(np.trace(res.covariances[0])))
    s1 = float(np.real(np.trace(res.covariances[1])))
    coeff0, floor0 = pc.offload_requirements(0.9, tasks[0], params)
    coeff1, floor1 = pc.offload_requirements(0.9, tasks[1], params)
    g0 = abs(cs.channels[0][0, 0]) ** 2
    g1 = abs(cs.channels[1][0, 0]) ** 2
    inst = {"eps2": EPS2, "g_own": g1, "g_up": g0, "s_up": s0,
            "coeff_own": coeff1, "floor_own": floor1,
            "coeff_up": coeff0 * s0, "floor_up": floor0, "p_max": 1.0}
    orc = oracle_grid("p52_scalar", inst, 220, stages=4)
    rho1 = math.log2(1.0 + g1 * s1 / EPS2)
    rho0 = math.log2((EPS2 + g0 * s0 + g1 * s1) / (EPS2 + g1 * s1))
    mine = coeff1 * s1 / rho1 + coeff0 * s0 / rho0
    assert abs(mine - orc.value) / orc.value < 1e-3


def test_p5_rate_floor_above_capacity_raises():
    rng = np.random.default_rng(37)
    params = make_params()
    # microscopic channels cannot carry 2.88 bit/s/Hz at 1 W
    cs = draw_channels(rng, 2, 4, 2, 1e-15)
    tasks = [make_task(), make_task()]
    mats = [0.25 * np.eye(2, dtype=complex) for _ in range(2)]
    with pytest.raises(DeadlineUnreachableError):
        pc.solve_p5(cs, [0.9, 0.9], tasks, params, mats)


def test_p5_warm_state_reuse_matches_cold():
    rng = np.random.default_rng(38)
    params = make_params()
    cs = draw_channels(rng, 2, 4, 2, 1e-5)
    tasks = [make_task(), make_task()]
    mats = [0.25 * np.eye(2, dtype=complex) for _ in range(2)]
    cold = pc.solve_p5(cs, [0.9, 0.9], tasks, params, mats)
    warm = pc.solve_p5(cs, [0.9, 0.9], tasks, params,
                       [m.copy() for m in cold.covariances],
                       warm_state=cold.warm)
    assert warm.objective <= cold.objective * (1.0 + 1e-6)


def test_p5_exit_point_feasible_across_random_draws():
    rng = np.random.default_rng(39)
    params = make_params()
    tasks = [make_task(), make_task()]
    converged = 0
    trials = 20
    for _ in range(trials):
        cs = draw_channels(rng, 2, 4, 2, 1e-5)
        mats = [0.25 * np.eye(2, dtype=complex) for _ in range(2)]
        ratios = [float(rng.uniform(0.3, 0.95)) for _ in range(2)]
        try:
            res = pc.solve_p5(cs, ratios, tasks, params, mats)
        except DeadlineUnreachableError:
            continue
        for k in range(2):
            coeff, floor = pc.offload_requirements(ratios[k], tasks[k], params)
            rho = pc._spectral_rate(cs, res.covariances, k, params.noise_power_w)
            assert rho >= floor * (1.0 - 1e-6)
            assert np.trace(res.covariances[k]).real <= params.p_max_w * (1.0 + 1e-9)
            w = np.linalg.eigvalsh(res.covariances[k])
            assert w.min() >= -1e-12
        if res.sweeps <= 20:
            converged += 1
    assert converged >= 0.9 * trials
