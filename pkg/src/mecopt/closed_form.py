"""Closed-form stages of the decomposition.

With ratios and precoders held fixed, the energy-optimal CPU frequency makes
the local deadline exactly tight. Substituting it back leaves, per user, a
scalar objective in the offloading ratio

    omega(beta) = a * (1 - beta)^3 + b * beta

with a = eta * C^3 * L^3 / T^2 (local term) and b = trace(S) * L / R
(offload term). omega is convex on [0, 1], so the constrained minimizer is
the stationary point 1 - sqrt(b / (3 a)) clamped to the feasible interval
[beta_floor, min(rate_cap, 1)].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from .errors import FrequencyCapExceededError, InstanceInfeasibleError

__all__ = [
    "RatioCoefficients",
    "optimal_frequency",
    "beta_floor",
    "optimal_ratio",
    "ratio_objective",
]

log = logging.getLogger(__name__)

# Tolerance for the empty-interval check; intervals this close to empty are
# treated as the single point beta_floor.
_INTERVAL_TOL = 1e-12


def beta_floor(task, f_max_hz):
    """Smallest offloading ratio the CPU cap admits under the deadline.

    Local work (1 - beta) * C * L must fit in T at frequency <= f_max, hence
    beta >= 1 - f_max * T / (C * L), floored at zero.
    """
    return max(0.0, 1.0 - f_max_hz * task.deadline_s / task.total_cycles)


def optimal_frequency(ratio, task, f_max_hz):
    """Deadline-tight CPU frequency for the local share of the task.

    Returns (1 - ratio) * C * L / T. Raises FrequencyCapExceededError when
    that exceeds f_max beyond roundoff, reporting the minimum ratio that
    restores feasibility.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio {ratio} outside [0, 1]")
    f = (1.0 - ratio) * task.total_cycles / task.deadline_s
    if f > f_max_hz * (1.0 + 1e-12):
        # judge feasibility on the ratio axis: near ratio 1 the difference
        # (1 - ratio) loses precision, so f overshooting the cap by a few
        # ulps of 1.0 times C L / T does not mean the share is infeasible
        if ratio < beta_floor(task, f_max_hz):
            raise FrequencyCapExceededError(
                required_hz=f,
                f_max_hz=f_max_hz,
                min_feasible_ratio=beta_floor(task, f_max_hz),
            )
    return min(f, f_max_hz)


@dataclass(frozen=True)
class RatioCoefficients:
    """Coefficients of the per-user scalar ratio objective.

    a: local-energy coefficient eta * C^3 * L^3 / T^2 (strictly positive).
    b: offload-energy coefficient trace(S) * L / R; +inf when the link rate
       is zero, in which case offloading is impossible beyond the floor.
    rate_cap: largest ratio the offload deadline admits, R * T / L.
    floor: smallest ratio the CPU cap admits (beta_floor).
    """

    a: float
    b: float
    rate_cap: float
    floor: float

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError("coefficient a must be strictly positive")
        if not (self.b >= 0.0 or math.isinf(self.b)):
            raise ValueError("coefficient b must be nonnegative")
        if self.rate_cap < 0.0:
            raise ValueError("rate_cap must be nonnegative")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("floor must lie in [0, 1]")

    @classmethod
    def from_operating_point(cls, task, trace_w, rate_bps, params):
        """Build coefficients from the current precoder trace and rate."""
        a = params.eta * task.total_cycles ** 3 / task.deadline_s ** 2
        if rate_bps > 0.0:
            b = trace_w * task.data_bits / rate_bps
            cap = rate_bps * task.deadline_s / task.data_bits
        else:
            b = math.inf
            cap = 0.0
        return cls(a=a, b=b, rate_cap=cap, floor=beta_floor(task, params.f_max_hz))


def ratio_objective(co, ratio):
    """Evaluate omega(beta) = a (1 - beta)^3 + b beta."""
    if math.isinf(co.b):
        return math.inf if ratio > 0.0 else co.a
    return co.a * (1.0 - ratio) ** 3 + co.b * ratio


def optimal_ratio(co):
    """Global minimizer of omega over [floor, min(rate_cap, 1)].

    Raises InstanceInfeasibleError when the interval is empty. With a zero
    link rate (b infinite) the only admissible point is the floor itself; it
    is returned and the condition logged, since the caller may still restore
    the link by re-optimizing precoders.
    """
    hi = min(co.rate_cap, 1.0)
    if co.floor > hi + _INTERVAL_TOL:
        raise InstanceInfeasibleError(
            f"ratio interval empty: floor {co.floor:.6g} above cap {hi:.6g}")
    hi = max(hi, co.floor)
    if math.isinf(co.b):
        log.debug("no-offload-link: zero rate, ratio pinned to floor %.6g", co.floor)
        return co.floor
    stationary = 1.0 - math.sqrt(co.b / (3.0 * co.a))
    return min(max(stationary, co.floor), hi)
