"""Brute-force grid minimizers used as ground truth in tests.

Each oracle evaluates a named subproblem on a dense lattice and refines the
best cell over a few zoom stages, so the returned minimum is exact up to the
final grid resolution and entirely independent of the solver code paths it
is checking. Grids larger than the hard point budget are refused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["GridResult", "oracle_grid", "grid_rate_feasible"]

# Hard cap on lattice points per zoom stage.
MAX_POINTS = int(1e8)

# Cells kept on each side of the incumbent when a zoom stage shrinks the box.
_ZOOM_MARGIN = 3


@dataclass(frozen=True)
class GridResult:
    """Minimum found by the lattice search."""

    value: float
    argmin: tuple
    evaluations: int


def _zoom_minimize(objective, bounds, resolution, stages):
    """Refine a lattice minimum of ``objective`` over a box.

    ``objective`` maps a tuple of broadcast coordinate arrays to an array of
    values (inf where infeasible). Each stage rebuilds the box around the
    incumbent cell with a margin of a few cells per side.
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    dim = len(bounds)
    if resolution ** dim > MAX_POINTS:
        raise ValueError(
            f"grid of {resolution}^{dim} points exceeds the {MAX_POINTS:g} budget")
    best_val, best_pt, used = math.inf, None, 0
    for _ in range(stages):
        axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
        mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
        vals = objective(tuple(mesh))
        used += vals.size
        flat = int(np.argmin(vals))
        idx = np.unravel_index(flat, vals.shape)
        val = float(vals[idx])
        if val < best_val:
            best_val = val
            best_pt = tuple(float(axes[d][idx[d]]) for d in range(dim))
        if not math.isfinite(best_val):
            break
        new_bounds = []
        for d in range(dim):
            step = (bounds[d][1] - bounds[d][0]) / (resolution - 1)
            lo = max(bounds[d][0], axes[d][idx[d]] - _ZOOM_MARGIN * step)
            hi = min(bounds[d][1], axes[d][idx[d]] + _ZOOM_MARGIN * step)
            if hi <= lo:
                lo, hi = bounds[d]
            new_bounds.append((lo, hi))
        bounds = new_bounds
    return GridResult(value=best_val, argmin=best_pt, evaluations=used)


def _ratio_oracle(inst, resolution, stages):
    a, b = float(inst["a"]), float(inst["b"])
    floor = float(inst.get("floor", 0.0))
    hi = min(float(inst.get("rate_cap", 1.0)), 1.0)
    hi = max(hi, floor)

    def objective(pt):
        (beta,) = pt
        if math.isinf(b):
            return np.where(beta > 0.0, math.inf, a * (1.0 - beta) ** 3)
        return a * (1.0 - beta) ** 3 + b * beta

    return _zoom_minimize(objective, [(floor, hi)], resolution, stages)


def _modes_rate(lams):
    """Sum-rate of parallel modes; ``lams`` is a list of (power, gain) pairs."""
    total = 0.0
    for lam, sig in lams:
        total = total + np.log2(1.0 + lam * sig)
    return total


def _p61_oracle(inst, resolution, stages):
    sig = np.asarray(inst["sigma_sq"], dtype=float)
    coeff, r_min = float(inst["coeff"]), float(inst["r_min"])
    p_max = float(inst["p_max"])

    def objective(pt):
        power = sum(pt)
        rate = _modes_rate(zip(pt, sig))
        bad = (power > p_max) | (rate < r_min) | (rate <= 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = coeff * power / rate
        return np.where(bad, math.inf, val)

    return _zoom_minimize(objective, [(0.0, p_max)] * sig.size, resolution, stages)


def _p52_scalar_oracle(inst, resolution, stages):
    """Second-decoded scalar user with one earlier-decoded neighbour.

    Lattice over (s, delta, xi) of: minimize delta + coeff_up / rate_up(s)
    subject to own_coeff * xi^2 / rate_own(s) <= delta, s >= xi^2, both rate
    floors, and the power budget. All channels are scalar: rate_own(s) =
    log2(1 + g_own s / eps2), rate_up(s) = log2((eps2 + g_up s_up + g_own s)
    / (eps2 + g_own s)).
    """
    eps2 = float(inst["eps2"])
    g_own, g_up = float(inst["g_own"]), float(inst["g_up"])
    s_up = float(inst["s_up"])
    c_own, f_own = float(inst["coeff_own"]), float(inst["floor_own"])
    c_up, f_up = float(inst["coeff_up"]), float(inst["floor_up"])
    p_max = float(inst["p_max"])

    # the two floors bracket s exactly in the scalar case, so the lattice
    # can concentrate where the feasible set actually lives
    s_lo = eps2 * (2.0 ** f_own - 1.0) / g_own if f_own > 0.0 else 0.0
    s_hi = p_max
    if f_up > 0.0:
        snr = 2.0 ** f_up - 1.0
        s_hi = min(p_max, (g_up * s_up - snr * eps2) / (snr * g_own))
    if s_hi < s_lo:
        return GridResult(value=math.inf, argmin=None, evaluations=0)

    def objective(pt):
        s, dlt, xi = pt
        r_own = np.log2(1.0 + g_own * s / eps2)
        r_up = np.log2((eps2 + g_up * s_up + g_own * s) / (eps2 + g_own * s))
        bad = (r_own < f_own) | (r_up < f_up) | (s > p_max)
        bad = bad | (xi * xi < s) | (c_own * xi * xi > dlt * r_own)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = dlt + c_up / r_up
        return np.where(bad, math.inf, val)

    rho_hi = math.log2(1.0 + g_own * s_hi / eps2)
    rho_lo = math.log2(1.0 + g_own * s_lo / eps2) if s_lo > 0.0 else rho_hi
    d_lo = 0.9 * c_own * s_lo / rho_hi if s_lo > 0.0 else 0.0
    d_hi = 1.1 * c_own * s_hi / max(rho_lo, 1e-12)
    bounds = [(s_lo, s_hi), (d_lo, d_hi),
              (0.99 * math.sqrt(s_lo), 1.01 * math.sqrt(s_hi))]
    return _zoom_minimize(objective, bounds, resolution, stages)


def _joint_single_oracle(inst, resolution, stages):
    """Single-user joint (ratio, scalar power) lattice.

    Objective a (1-beta)^3 + beta L s / (B rho(s)) with rho(s) =
    log2(1 + g s / eps2), subject to the offload deadline
    beta L <= T B rho(s), the power budget, and beta in [floor, 1].
    """
    a = float(inst["a"])
    data_bits, deadline = float(inst["data_bits"]), float(inst["deadline_s"])
    bandwidth = float(inst["bandwidth_hz"])
    eps2, gain = float(inst["eps2"]), float(inst["g"])
    p_max = float(inst["p_max"])
    floor = float(inst.get("floor", 0.0))

    def objective(pt):
        beta, s = pt
        rho = np.log2(1.0 + gain * s / eps2)
        bad = beta * data_bits > deadline * bandwidth * rho * (1.0 + 1e-12)
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(beta > 0.0,
                           beta * data_bits * s / (bandwidth * rho), 0.0)
        val = a * (1.0 - beta) ** 3 + off
        return np.where(bad & (beta > 0.0), math.inf, val)

    bounds = [(floor, 1.0), (0.0, p_max)]
    return _zoom_minimize(objective, bounds, resolution, stages)


_ORACLES = {
    "ratio": _ratio_oracle,
    "p61": _p61_oracle,
    "p52_scalar": _p52_scalar_oracle,
    "joint_single": _joint_single_oracle,
}


def oracle_grid(tag, instance, resolution, stages=3):
    """Lattice minimum of the named subproblem; see the per-tag helpers."""
    if tag not in _ORACLES:
        raise ValueError(f"unknown oracle tag {tag!r}; have {sorted(_ORACLES)}")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    return _ORACLES[tag](instance, int(resolution), int(stages))


def grid_rate_feasible(sigma_sq, delta, coeff, r_min, p_max, resolution):
    """Single-lattice feasibility probe for the epigraph level ``delta``.

    Feasible iff some lattice allocation meets the power budget, the rate
    floor, and rate >= (coeff / delta) * power.
    """
    sig = np.asarray(sigma_sq, dtype=float)
    if sig.size ** 2 > MAX_POINTS:
        raise ValueError("grid too large")
    axes = [np.linspace(0.0, p_max, resolution) for _ in range(sig.size)]
    mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
    power = sum(mesh)
    rate = _modes_rate(zip(mesh, sig))
    ok = (power <= p_max) & (rate >= r_min) & (delta * rate >= coeff * power)
    return bool(np.any(ok))
