"""Per-user transmit covariance updates under successive decoding.

The transmit side is optimized one user at a time, in decoding order. The
user decoded first influences nobody else (its signal is cancelled before
later users are decoded and nobody precedes it), so its covariance solves an
independent fractional program over the eigenmodes of its whitened link
(``solve_p51``). Every later user additionally carries the rate floors and
offload-energy epigraphs of the users decoded before it, which still see the
updated covariance as interference; those subproblems go through successive
convex refinement with tangent-plane surrogates (``solve_p52``).

``solve_p5`` runs full sweeps over the decoding order until the total
offload energy settles. Because each per-user update enforces every
constraint its variable touches and leaves downstream rates untouched, a
feasible starting point stays feasible through all sweeps.

Rates inside this module are spectral efficiencies (bit/s/Hz); energies are
joules. ``requirements`` sequences hold one (energy_coeff, rate_floor) pair
per user, built by ``offload_requirements``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .convex_core import (
    SurrogateProblem,
    UpstreamTerm,
    bisect_p61,
    eigen_decompose,
    min_power_for_rate,
    solve_surrogate,
    waterfill_max_rate,
    waterfill_rate,
    whiten,
)
from .errors import (
    DeadlineUnreachableError,
    NumericalFailureError,
    RateConstraintInfeasibleError,
    SurrogateInfeasibleError,
)
from .model import hermitian_part, logdet2_psd

log = logging.getLogger(__name__)

__all__ = [
    "offload_requirements",
    "solve_p51",
    "solve_p52",
    "P5Result",
    "solve_p5",
]

# relative slack granted when re-checking the original constraints on a
# freshly solved covariance
VERIFY_TOL = 1e-6
# closure of the power proxy: above this trace-relative gap the exact
# penalty gets escalated
CLOSURE_TOL = 1e-4


def offload_requirements(ratio, task, params):
    """Energy coefficient and deadline rate floor of one user's uplink.

    Offload energy equals coeff * tr(S) / rho with rho the spectral
    efficiency, and meeting the deadline needs rho >= floor. Both vanish
    when the user keeps everything local.
    """
    coeff = ratio * task.data_bits / params.bandwidth_hz
    floor = ratio * task.data_bits / (task.deadline_s * params.bandwidth_hz)
    return coeff, floor


def _interference(channels, mats, user, noise_power_w, exclude=None):
    """Interference-plus-noise covariance at user's decoding stage."""
    q = noise_power_w * np.eye(channels.n_rx, dtype=complex)
    for i in channels.decoded_after(user):
        if i == exclude:
            continue
        h = channels.channels[i]
        q = q + h @ mats[i] @ h.conj().T
    return hermitian_part(q)


def _spectral_rate(channels, mats, user, noise_power_w):
    """True spectral efficiency of one user at the current covariances."""
    q = _interference(channels, mats, user, noise_power_w)
    h = channels.channels[user]
    m = q + h @ mats[user] @ h.conj().T
    return max(0.0, logdet2_psd(hermitian_part(m)) - logdet2_psd(q))


def _floors_reachable(channels, mats, requirements, params):
    """Whether every rate floor clears its full-power capacity as-is."""
    for k in range(channels.n_users):
        coeff, floor = requirements[k]
        if coeff <= 0.0 or floor <= 0.0:
            continue
        q = _interference(channels, mats, k, params.noise_power_w)
        eig = eigen_decompose(whiten(q), channels.channels[k])
        if waterfill_rate(eig.singular_values_sq, params.p_max_w) < floor * (1.0 - 1e-12):
            return False
    return True


def solve_p51(channels, mats, user, energy_coeff, rate_floor, params, tol=1e-6):
    """Covariance of a user whose variable constrains nobody upstream.

    Whiten the interference, diagonalize the link, and run the fractional
    bisection over the eigenmode powers. Exact up to the bisection
    tolerance. Raises DeadlineUnreachableError when the rate floor exceeds
    the full-power capacity of the link.
    """
    n_tx = channels.n_tx
    if energy_coeff <= 0.0 and rate_floor <= 0.0:
        return np.zeros((n_tx, n_tx), dtype=complex)
    q = _interference(channels, mats, user, params.noise_power_w)
    eig = eigen_decompose(whiten(q), channels.channels[user])
    try:
        res = bisect_p61(eig.singular_values_sq, energy_coeff, rate_floor,
                         params.p_max_w, tol=tol)
    except RateConstraintInfeasibleError as exc:
        raise DeadlineUnreachableError(user, str(exc)) from exc
    v = eig.right_vectors
    return hermitian_part((v * res.allocation) @ v.conj().T)


def _partial_energy(channels, mats, user, requirements, noise_power_w):
    """Offload energy of the user plus everyone decoded before it.

    This is exactly the portion of the total offload energy that depends on
    the user's covariance; infinity when some involved rate floor fails.
    """
    total = 0.0
    involved = [user] + [k for k in channels.decoded_before(user)]
    for k in involved:
        coeff, floor = requirements[k]
        if coeff <= 0.0:
            continue
        tr = float(np.real(np.trace(mats[k])))
        if tr <= 0.0:
            return math.inf
        rho = _spectral_rate(channels, mats, k, noise_power_w)
        if rho <= 0.0:
            return math.inf
        total += coeff * tr / rho
    return total


def _original_feasible(channels, mats, user, requirements, params):
    """Do the rate floors touched by this user's covariance hold?"""
    tr = float(np.real(np.trace(mats[user])))
    if tr > params.p_max_w * (1.0 + VERIFY_TOL):
        return False
    for k in [user] + list(channels.decoded_before(user)):
        _, floor = requirements[k]
        if floor <= 0.0:
            continue
        rho = _spectral_rate(channels, mats, k, params.noise_power_w)
        if rho < floor * (1.0 - VERIFY_TOL) - 1e-15:
            return False
    return True


def _anchor_candidates(channels, mats, user, q_own, floor_own, params):
    """Feasibility-screened starting covariances for the refinement.

    The incoming covariance may sit orders of magnitude above the optimal
    power (the additive proxy penalty then moves the trace very slowly), so
    trace-scaled copies and water-filled covariances sized to the own rate
    floor are screened alongside it.
    """
    incoming = hermitian_part(np.asarray(mats[user], dtype=complex))
    cands = [incoming]
    tr_in = float(np.real(np.trace(incoming)))
    for s in (0.3, 0.1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7):
        if tr_in * s > 0.0:
            cands.append(incoming * s)
    eig = eigen_decompose(whiten(q_own), channels.channels[user])
    p_req = min_power_for_rate(eig.singular_values_sq, floor_own,
                               p_hint=params.p_max_w)
    if math.isfinite(p_req) and p_req > 0.0:
        v = eig.right_vectors
        for boost in (1.1, 2.0, 8.0):
            p = min(p_req * boost, params.p_max_w)
            lam = waterfill_max_rate(eig.singular_values_sq, p)
            cands.append(hermitian_part((v * lam) @ v.conj().T))
    return incoming, cands


def solve_p52(channels, mats, user, requirements, params, *,
              sca_tol=1e-4, max_sca=30, penalty=10.0, barrier_tol=1e-6,
              warm=None):
    """Covariance update for a user with constrained earlier-decoded users.

    Successive convex refinement: anchor the interference tangents at the
    incoming covariance, solve the barrier surrogate, re-anchor at the
    solution, and stop once the surrogate objective settles within
    ``sca_tol`` relative. The power proxy penalty is escalated (and the
    refinement restarted from the same anchor) whenever the proxy fails to
    close onto the trace. The returned covariance never increases the true
    partial offload energy over the incoming one unless the incoming point
    was infeasible to begin with.

    Returns (covariance, last surrogate solution or None). Raises
    DeadlineUnreachableError when no covariance can satisfy the touched
    constraints starting from an infeasible incoming point.
    """
    coeff_own, floor_own = requirements[user]
    if coeff_own <= 0.0:
        return np.zeros((channels.n_tx, channels.n_tx), dtype=complex), None

    noise = params.noise_power_w
    q_own = _interference(channels, mats, user, noise)
    upstream = []
    for k in channels.decoded_before(user):
        coeff_k, floor_k = requirements[k]
        if coeff_k <= 0.0 and floor_k <= 0.0:
            continue
        h_k = channels.channels[k]
        base = _interference(channels, mats, k, noise, exclude=user)
        signal = hermitian_part(h_k @ mats[k] @ h_k.conj().T)
        tr_k = float(np.real(np.trace(mats[k])))
        upstream.append(UpstreamTerm(
            interference_base=base, signal=signal,
            energy_coeff=coeff_k * tr_k, rate_floor=floor_k))
    if not upstream:
        raise ValueError("no constrained earlier-decoded users; use solve_p51")

    incoming, cands = _anchor_candidates(channels, mats, user, q_own,
                                         floor_own, params)
    trial = list(mats)
    incumbent, incumbent_energy = None, math.inf
    for cand in cands:
        trial[user] = cand
        if not _original_feasible(channels, trial, user, requirements, params):
            continue
        e = _partial_energy(channels, trial, user, requirements, noise)
        if e < incumbent_energy:
            incumbent, incumbent_energy = cand, e
    anchor = incumbent if incumbent is not None else incoming

    # size the proxy penalty against the energy's sensitivity to the proxy
    # (roughly 1 / own spectral rate); oversizing throttles every step
    trial[user] = anchor
    rho_anchor = _spectral_rate(channels, trial, user, noise)
    pen = min(penalty, max(0.05, 10.0 / max(rho_anchor, floor_own, 0.5)))
    escalations = 0
    prev_obj = None
    last_sol = warm
    best_cov = anchor

    for it in range(max_sca):
        problem = SurrogateProblem(
            h_var=channels.channels[user], q_own=q_own,
            own_energy_coeff=coeff_own, own_rate_floor=floor_own,
            p_max=params.p_max_w, upstream=tuple(upstream),
            anchor_cov=anchor,
            anchor_xi=math.sqrt(max(0.0, float(np.real(np.trace(anchor))))),
            penalty=pen)
        try:
            sol = solve_surrogate(problem, tol=barrier_tol, warm=last_sol)
        except SurrogateInfeasibleError:
            if it == 0:
                if incumbent is not None:
                    return incumbent, None
                raise DeadlineUnreachableError(user)
            break
        last_sol = sol
        if sol.closure_gap > CLOSURE_TOL and escalations < 6:
            pen *= 5.0
            escalations += 1
            prev_obj = None
            continue
        best_cov = sol.covariance
        if prev_obj is not None:
            if abs(sol.objective - prev_obj) <= sca_tol * max(abs(prev_obj), 1e-30):
                anchor = sol.covariance
                break
        prev_obj = sol.objective
        anchor = sol.covariance

    candidate = hermitian_part(best_cov)
    w, v = np.linalg.eigh(candidate)
    candidate = hermitian_part((v * np.clip(w, 0.0, None)) @ v.conj().T)
    tr = float(np.real(np.trace(candidate)))
    if tr > params.p_max_w:
        candidate *= params.p_max_w / tr

    trial[user] = candidate
    new_ok = _original_feasible(channels, trial, user, requirements, params)
    new_energy = _partial_energy(channels, trial, user, requirements, noise)

    if new_ok and new_energy <= incumbent_energy:
        return candidate, last_sol
    if incumbent is not None:
        return incumbent, last_sol
    raise NumericalFailureError(
        f"user {user}: refinement left both the incoming and the updated "
        "covariance infeasible")


@dataclass
class P5Result:
    """Outcome of the covariance sweeps at fixed offloading ratios."""

    covariances: list
    objective: float
    objectives: list = field(default_factory=list)
    sweeps: int = 0
    warm: dict = field(default_factory=dict)


def solve_p5(channels, ratios, tasks, params, mats, *,
             sweep_tol=1e-4, max_sweeps=20, sca_tol=1e-4, max_sca=30,
             bisection_tol=1e-6, penalty=10.0, barrier_tol=1e-6,
             warm_state=None):
    """Minimize total offload energy over all covariances, ratios fixed.

    Sweeps the users in decoding order. Within a sweep each user solves its
    own subproblem with everyone else frozen; a user with no constrained
    earlier-decoded users takes the exact eigenmode path, the rest go
    through convex refinement. Users that offload nothing transmit nothing.
    Stops when the objective changes by less than ``sweep_tol`` relative
    between sweeps.
    """
    n = channels.n_users
    noise = params.noise_power_w
    requirements = [offload_requirements(ratios[k], tasks[k], params)
                    for k in range(n)]
    mats = [hermitian_part(np.asarray(m, dtype=complex)) for m in mats]
    for k in range(n):
        if requirements[k][0] <= 0.0:
            mats[k] = np.zeros((channels.n_tx, channels.n_tx), dtype=complex)
    # interference from the incoming covariances can put a rate floor out of
    # reach even when the floors are jointly achievable at lower power;
    # halve everything until every floor clears its full-power capacity
    for _ in range(60):
        if _floors_reachable(channels, mats, requirements, params):
            break
        mats = [0.5 * m for m in mats]
    warm = dict(warm_state) if warm_state else {}

    def objective():
        total = 0.0
        for k in range(n):
            coeff, _ = requirements[k]
            if coeff <= 0.0:
                continue
            tr = float(np.real(np.trace(mats[k])))
            rho = _spectral_rate(channels, mats, k, noise)
            if tr <= 0.0 or rho <= 0.0:
                return math.inf
            total += coeff * tr / rho
        return total

    history = []
    prev = None
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        for user in channels.decoding_order:
            coeff, floor = requirements[user]
            if coeff <= 0.0:
                continue
            constrained = [k for k in channels.decoded_before(user)
                           if requirements[k][0] > 0.0 or requirements[k][1] > 0.0]
            if not constrained:
                mats[user] = solve_p51(channels, mats, user, coeff, floor,
                                       params, tol=bisection_tol)
            else:
                mats[user], sol = solve_p52(
                    channels, mats, user, requirements, params,
                    sca_tol=sca_tol, max_sca=max_sca, penalty=penalty,
                    barrier_tol=barrier_tol, warm=warm.get(user))
                if sol is not None:
                    warm[user] = sol
        val = objective()
        history.append(val)
        if prev is not None and math.isfinite(val):
            if abs(val - prev) <= sweep_tol * max(abs(prev), 1e-30):
                break
        if val == 0.0:
            break
        prev = val
    return P5Result(covariances=mats, objective=history[-1] if history else 0.0,
                    objectives=history, sweeps=sweeps, warm=warm)
