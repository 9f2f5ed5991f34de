"""Outer joint algorithm and the three comparison schemes.

The joint solver alternates two exact blocks until the total-energy
objective stalls: with precoders fixed, every user's offloading ratio has a
closed-form minimizer (``closed_form.optimal_ratio``); with ratios fixed,
the precoders are refined by the per-user sweep in ``precoding.solve_p5``.
Each block never increases the objective, so the recorded per-iteration
trace is non-increasing. CPU frequencies are recovered at the end by making
the local deadline exactly tight.

The baselines reuse the same machinery under pinned decisions: pure local
computing (ratio zero), full offloading (ratio one), and an orthogonal
variant that hands each user an equal bandwidth slice and optimizes it as an
independent single-user system.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .closed_form import (
    RatioCoefficients,
    optimal_frequency,
    optimal_ratio,
)
from .errors import (
    DeadlineUnreachableError,
    FrequencyCapExceededError,
    InstanceInfeasibleError,
    NumericalFailureError,
    RateConstraintInfeasibleError,
)
from .model import (
    ChannelSet,
    EnergyBreakdown,
    OffloadDecision,
    PrecoderSet,
    achievable_rate,
    check_constraints,
    evaluate,
)
from .precoding import solve_p5

__all__ = [
    "SolverKnobs",
    "Scenario",
    "Solution",
    "solve_joint",
    "solve_local",
    "solve_full_offload",
    "solve_fdma",
]

log = logging.getLogger(__name__)

# Constraint audit tolerance applied to every returned feasible Solution.
AUDIT_TOL = 1e-6
RATIO_SNAP = 1e-9


@dataclass(frozen=True)
class SolverKnobs:
    """Tolerances and iteration caps for the nested solvers.

    outer_tol: relative objective change that stops the alternating loop.
    max_outer_iters: cap on alternating iterations.
    sca_tol / max_sca_iters: convex-refinement loop inside each precoder
        update for later-decoded users.
    bisection_tol: relative tolerance of the fractional-objective bisection
        used for first-decoded users.
    penalty_delta_init: initial weight coupling the power proxy to the
        trace in the refinement surrogate.
    max_sweeps: per-call cap on user sweeps inside the precoder stage.
    """

    outer_tol: float = 1e-4
    max_outer_iters: int = 30
    sca_tol: float = 1e-4
    max_sca_iters: int = 30
    bisection_tol: float = 1e-6
    penalty_delta_init: float = 10.0
    max_sweeps: int = 20

    def __post_init__(self):
        if not self.outer_tol > 0.0:
            raise ValueError("outer_tol must be strictly positive")
        for name in ("max_outer_iters", "max_sca_iters", "max_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(frozen=True)
class Scenario:
    """One complete problem instance: system, per-user tasks, channels."""

    params: object
    tasks: tuple
    channels: ChannelSet
    knobs: SolverKnobs = field(default_factory=SolverKnobs)

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        n = self.params.n_users
        if len(self.tasks) != n or self.channels.n_users != n:
            raise ValueError(
                f"scenario expects {n} users, got {len(self.tasks)} tasks "
                f"and {self.channels.n_users} channels")


@dataclass(frozen=True)
class Solution:
    """Operating point plus convergence record of one solver run.

    ``trace`` lists the total-energy objective after each outer iteration;
    ``status`` is one of converged, max-iters, infeasible. Infeasible runs
    carry the offending user and a None breakdown; all other fields then
    hold the all-zero operating point.
    """

    decision: OffloadDecision
    precoders: PrecoderSet
    breakdown: object
    trace: tuple
    status: str
    infeasible_user: object = None
    iterations: int = 0

    def __post_init__(self):
        if self.status not in ("converged", "max-iters", "infeasible"):
            raise ValueError(f"unknown status {self.status!r}")
        object.__setattr__(self, "trace", tuple(float(v) for v in self.trace))

    @property
    def feasible(self):
        return self.status != "infeasible"

    @property
    def total_energy_j(self):
        return self.breakdown.total_energy_j if self.breakdown is not None else math.nan


def _zero_solution(sc, status, user, trace=()):
    n = sc.params.n_users
    zeros = tuple(np.zeros((sc.params.n_tx, sc.params.n_tx), dtype=complex)
                  for _ in range(n))
    return Solution(
        decision=OffloadDecision(ratios=(0.0,) * n, frequencies_hz=(0.0,) * n),
        precoders=PrecoderSet(covariances=zeros),
        breakdown=None,
        trace=trace,
        status=status,
        infeasible_user=user,
    )


def _initial_covariances(sc):
    """Scaled-identity start, halved until strictly inside the power budget."""
    p = sc.params
    scale = p.p_max_w / p.n_tx
    mats = [np.eye(p.n_tx, dtype=complex) * scale for _ in range(p.n_users)]
    for _ in range(60):
        if all(float(np.real(np.trace(s))) < p.p_max_w for s in mats):
            break
        mats = [0.5 * s for s in mats]
    return mats


def _objective(sc, mats, ratios):
    """Total energy with deadline-tight frequencies substituted in.

    Per user: beta * L * trace(S) / R + eta * (C L)^3 (1 - beta)^3 / T^2.
    Infinite when a user offloads over a dead link.
    """
    pre = PrecoderSet(covariances=tuple(mats))
    total = 0.0
    for k, task in enumerate(sc.tasks):
        beta = ratios[k]
        a = sc.params.eta * task.total_cycles ** 3 / task.deadline_s ** 2
        total += a * (1.0 - beta) ** 3
        if beta > 0.0:
            rate = achievable_rate(k, sc.channels, pre, sc.params)
            if rate <= 0.0:
                return math.inf
            total += beta * task.data_bits * float(np.real(np.trace(mats[k]))) / rate
    return total


def _finalize(sc, mats, ratios, trace, status, iterations):
    """Recover frequencies, audit constraints, and assemble the Solution."""
    freqs = []
    for k, task in enumerate(sc.tasks):
        try:
            freqs.append(optimal_frequency(ratios[k], task, sc.params.f_max_hz))
        except FrequencyCapExceededError:
            log.info("user %d: local share misses the CPU cap", k)
            return _zero_solution(sc, "infeasible", k, trace=trace)
    decision = OffloadDecision(ratios=tuple(ratios), frequencies_hz=tuple(freqs))
    precoders = PrecoderSet.sanitize(mats, sc.params.p_max_w)
    breakdown = evaluate(sc.channels, precoders, decision, sc.tasks, sc.params)
    report = check_constraints(sc.channels, precoders, decision, sc.tasks,
                               sc.params, tol=AUDIT_TOL)
    if not report.all_ok:
        names = ", ".join(f"user {k}: {c.name}" for k, c in report.failures())
        raise NumericalFailureError(f"solution failed the constraint audit ({names})")
    return Solution(decision=decision, precoders=precoders, breakdown=breakdown,
                    trace=trace, status=status, iterations=iterations)


def _alternate(sc, mats0, warm0=None):
    """Run the ratio/precoder alternation from the given precoders.

    Ratios are refreshed first each iteration (from the rates the current
    precoders support), then the precoders are re-optimized under the new
    rate floors. Stops when the relative objective change drops below
    ``outer_tol`` or after ``max_outer_iters`` iterations.
    """
    knobs = sc.knobs
    mats = list(mats0)
    ratios = [0.0] * sc.params.n_users
    trace = []
    warm = warm0
    prev = math.inf
    status = "max-iters"
    iterations = 0
    for it in range(knobs.max_outer_iters):
        iterations = it + 1
        pre = PrecoderSet(covariances=tuple(mats))
        for k, task in enumerate(sc.tasks):
            rate = achievable_rate(k, sc.channels, pre, sc.params)
            tr = float(np.real(np.trace(mats[k])))
            co = RatioCoefficients.from_operating_point(task, tr, rate, sc.params)
            try:
                ratios[k] = optimal_ratio(co)
            except InstanceInfeasibleError:
                # the current rate cannot carry even the mandatory share;
                # pin the ratio at the floor and let the precoder stage
                # try to raise the rate to match
                log.info("user %d: ratio interval empty at iteration %d, "
                         "pinning to floor %.6g", k, it, co.floor)
                ratios[k] = co.floor
            if co.floor > 1.0 - RATIO_SNAP:
                # a local share below timing resolution is pure numerical
                # noise; offload it outright
                ratios[k] = 1.0
        try:
            res = solve_p5(
                sc.channels, ratios, sc.tasks, sc.params, mats,
                sweep_tol=knobs.outer_tol, max_sweeps=knobs.max_sweeps,
                sca_tol=knobs.sca_tol, max_sca=knobs.max_sca_iters,
                bisection_tol=knobs.bisection_tol,
                penalty=knobs.penalty_delta_init, warm_state=warm)
        except (DeadlineUnreachableError, RateConstraintInfeasibleError) as exc:
            user = getattr(exc, "user", None)
            log.info("infeasible at iteration %d: %s", it, exc)
            return _zero_solution(sc, "infeasible", user, trace=tuple(trace))
        mats = list(res.covariances)
        warm = res.warm
        obj = _objective(sc, mats, ratios)
        trace.append(obj)
        if prev < math.inf and abs(prev - obj) <= knobs.outer_tol * max(abs(prev), 1e-30):
            status = "converged"
            break
        prev = obj
    return _finalize(sc, mats, ratios, tuple(trace), status, iterations)


def solve_joint(sc):
    """Jointly optimize ratios, frequencies and precoders.

    The alternation is a fixed-point iteration of two exact block solvers,
    and the ratio block's deadline cap beta <= R T / L evaluates the rates
    of the *current* precoders. Since the precoder block has no incentive
    to exceed its rate floors, that cap pins the ratios near whatever the
    first iteration chose, so the reachable set depends strongly on the
    starting precoders. Two starts cover the corners: the scaled-identity
    point (whose first ratio step dominates every ratio at or below its
    rate cap, including the all-local corner when it is feasible) and the
    precoders sized for full offloading (whose first ratio step dominates
    the full-offload corner). The lower-energy feasible run wins.
    """
    runs = [_alternate(sc, _initial_covariances(sc))]
    try:
        full = solve_p5(
            sc.channels, [1.0] * sc.params.n_users, sc.tasks, sc.params,
            _initial_covariances(sc),
            sweep_tol=sc.knobs.outer_tol, max_sweeps=sc.knobs.max_sweeps,
            sca_tol=sc.knobs.sca_tol, max_sca=sc.knobs.max_sca_iters,
            bisection_tol=sc.knobs.bisection_tol,
            penalty=sc.knobs.penalty_delta_init)
    except (DeadlineUnreachableError, RateConstraintInfeasibleError):
        log.info("full-offload start unavailable, keeping the identity start")
    else:
        runs.append(_alternate(sc, full.covariances, warm0=full.warm))
    feasible = [s for s in runs if s.feasible]
    if not feasible:
        return runs[0]
    return min(feasible, key=lambda s: s.total_energy_j)


def solve_local(sc):
    """Everything computed on the device: ratio zero, deadline-tight CPU."""
    n = sc.params.n_users
    for k, task in enumerate(sc.tasks):
        f = task.total_cycles / task.deadline_s
        if f > sc.params.f_max_hz * (1.0 + 1e-12):
            log.info("user %d: local computing needs %.4g Hz, cap %.4g",
                     k, f, sc.params.f_max_hz)
            return _zero_solution(sc, "infeasible", k)
    mats = [np.zeros((sc.params.n_tx, sc.params.n_tx), dtype=complex)
            for _ in range(n)]
    ratios = [0.0] * n
    trace = (_objective(sc, mats, ratios),)
    return _finalize(sc, mats, ratios, trace, "converged", 1)


def solve_full_offload(sc):
    """Everything offloaded: ratio one, precoders sized for L/(T B)."""
    knobs = sc.knobs
    mats = _initial_covariances(sc)
    ratios = [1.0] * sc.params.n_users
    try:
        res = solve_p5(
            sc.channels, ratios, sc.tasks, sc.params, mats,
            sweep_tol=knobs.outer_tol, max_sweeps=knobs.max_sweeps,
            sca_tol=knobs.sca_tol, max_sca=knobs.max_sca_iters,
            bisection_tol=knobs.bisection_tol,
            penalty=knobs.penalty_delta_init)
    except (DeadlineUnreachableError, RateConstraintInfeasibleError) as exc:
        log.info("full offloading infeasible: %s", exc)
        return _zero_solution(sc, "infeasible", getattr(exc, "user", None))
    mats = list(res.covariances)
    trace = tuple(res.objectives)
    return _finalize(sc, mats, ratios, trace, "converged", res.sweeps)


def _single_user_scenario(sc, k, bandwidth_hz):
    params = replace(sc.params, n_users=1, bandwidth_hz=bandwidth_hz)
    channels = ChannelSet(channels=(sc.channels.channels[k],), decoding_order=(0,))
    return Scenario(params=params, tasks=(sc.tasks[k],), channels=channels,
                    knobs=sc.knobs)


def solve_fdma(sc):
    """Orthogonal-access variant: equal bandwidth slices, no interference.

    Each user is optimized as an independent single-user system over B/N of
    the spectrum (noise power scales with the slice). Per-user traces are
    summed after padding each with its final value.
    """
    n = sc.params.n_users
    slice_hz = sc.params.bandwidth_hz / n
    subs = []
    for k in range(n):
        sub = solve_joint(_single_user_scenario(sc, k, slice_hz))
        if not sub.feasible:
            return _zero_solution(sc, "infeasible", k)
        subs.append(sub)
    ratios = tuple(s.decision.ratios[0] for s in subs)
    freqs = tuple(s.decision.frequencies_hz[0] for s in subs)
    mats = tuple(s.precoders.covariances[0] for s in subs)
    depth = max(len(s.trace) for s in subs)
    padded = np.zeros(depth)
    for s in subs:
        t = np.asarray(s.trace)
        padded[: len(t)] += t
        padded[len(t):] += t[-1]
    breakdown = EnergyBreakdown(
        offload_energy_j=tuple(s.breakdown.offload_energy_j[0] for s in subs),
        local_energy_j=tuple(s.breakdown.local_energy_j[0] for s in subs),
        offload_time_s=tuple(s.breakdown.offload_time_s[0] for s in subs),
        local_time_s=tuple(s.breakdown.local_time_s[0] for s in subs),
        rate_bps=tuple(s.breakdown.rate_bps[0] for s in subs),
        total_energy_j=float(sum(s.breakdown.total_energy_j for s in subs)),
    )
    status = "converged" if all(s.status == "converged" for s in subs) else "max-iters"
    return Solution(
        decision=OffloadDecision(ratios=ratios, frequencies_hz=freqs),
        precoders=PrecoderSet(covariances=mats),
        breakdown=breakdown,
        trace=tuple(padded),
        status=status,
        iterations=max(s.iterations for s in subs),
    )
