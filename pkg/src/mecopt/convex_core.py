"""Convex machinery shared by the precoding stages.

Four building blocks live here:

* noise whitening and the eigen-decomposition that diagonalizes a whitened
  MIMO link (``whiten``, ``eigen_decompose``);
* water-filling over parallel modes (``waterfill_max_rate``) plus the
  1-D feasibility probe and fractional-objective bisection used for the
  interference-free user (``p81_feasible``, ``bisect_p61``);
* the convex surrogate assembled during successive convex refinement
  (``SurrogateProblem``) and its dedicated solver (``solve_surrogate``), a
  two-phase logarithmic-barrier interior method with exact Newton steps over
  a real parametrization of the Hermitian covariance.

All rates are spectral efficiencies in bit/s/Hz (base-2 logs); powers in W.
The barrier solver internally rescales powers and energies to order one, so
it is safe to call at physical operating points (nanowatt-scale powers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NumericalFailureError,
    RateConstraintInfeasibleError,
    SurrogateInfeasibleError,
)
from .model import LN2, hermitian_part, logdet2_psd

__all__ = [
    "whiten",
    "EigenChannel",
    "eigen_decompose",
    "waterfill_max_rate",
    "waterfill_rate",
    "min_power_for_rate",
    "FeasibilityResult",
    "p81_feasible",
    "P61Result",
    "bisect_p61",
    "hermitian_basis",
    "theta_from_matrix",
    "matrix_from_theta",
    "logdet2_tangent",
    "UpstreamTerm",
    "SurrogateProblem",
    "SurrogateSolution",
    "solve_surrogate",
]


# ---------------------------------------------------------------------------
# whitening and diagonalization
# ---------------------------------------------------------------------------

def whiten(q):
    """Whitening factor A of a Hermitian positive definite covariance.

    Returns the inverse of the lower Cholesky factor, so A^H A = Q^{-1} and
    A Q A^H = I. Raises ValueError when Q is not positive definite.
    """
    q = hermitian_part(np.asarray(q, dtype=complex))
    try:
        chol = np.linalg.cholesky(q)
    except np.linalg.LinAlgError as exc:
        raise ValueError("whiten requires a positive definite covariance") from exc
    return np.linalg.solve(chol, np.eye(q.shape[0], dtype=complex))


@dataclass(frozen=True)
class EigenChannel:
    """Eigenmodes of a whitened MIMO link.

    singular_values_sq holds the squared singular values of A H, padded with
    zeros to the transmit dimension and sorted in descending order;
    right_vectors is the matching unitary basis of input directions.
    """

    singular_values_sq: np.ndarray
    right_vectors: np.ndarray

    def __post_init__(self):
        sig = np.asarray(self.singular_values_sq, dtype=float)
        v = np.asarray(self.right_vectors, dtype=complex)
        sig.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "singular_values_sq", sig)
        object.__setattr__(self, "right_vectors", v)
        if np.any(np.diff(sig) > 1e-12 * max(1.0, float(sig[0]) if sig.size else 1.0)):
            raise ValueError("singular values must be sorted in descending order")
        gram = v.conj().T @ v
        if np.abs(gram - np.eye(v.shape[1])).max() > 1e-10:
            raise ValueError("right_vectors must be unitary")


def eigen_decompose(a, h):
    """Diagonalize the whitened link A H into independent scalar modes."""
    m = np.asarray(a, dtype=complex) @ np.asarray(h, dtype=complex)
    _, sing, vh = np.linalg.svd(m, full_matrices=True)
    n_tx = m.shape[1]
    sig_sq = np.zeros(n_tx)
    sig_sq[: sing.size] = sing**2
    return EigenChannel(singular_values_sq=sig_sq, right_vectors=vh.conj().T)


# ---------------------------------------------------------------------------
# water-filling over parallel modes
# ---------------------------------------------------------------------------

def waterfill_max_rate(sigma_sq, p_total):
    """Power allocation maximizing sum log2(1 + lam * sigma^2), sum lam = p.

    Modes with zero gain receive nothing; with every gain zero the all-zero
    allocation is returned. Standard water level construction over the modes
    sorted by gain.
    """
    sig = np.asarray(sigma_sq, dtype=float)
    if np.any(sig < 0):
        raise ValueError("mode gains must be nonnegative")
    if p_total < 0:
        raise ValueError("power budget must be nonnegative")
    lam = np.zeros_like(sig)
    pos = np.flatnonzero(sig > 0)
    if pos.size == 0 or p_total == 0.0:
        return lam
    order = pos[np.argsort(sig[pos])[::-1]]
    inv = 1.0 / sig[order]
    # water level with the k strongest modes active
    cum = np.cumsum(inv)
    ks = np.arange(1, order.size + 1)
    levels = (p_total + cum) / ks
    active = levels > inv  # mode k is used iff the level clears its floor
    k = int(np.max(np.flatnonzero(active)) + 1) if np.any(active) else 1
    level = (p_total + cum[k - 1]) / k
    fill = np.clip(level - inv[:k], 0.0, None)
    lam[order[:k]] = fill
    # exact budget: compensate roundoff on the largest mode
    gap = p_total - lam.sum()
    lam[order[0]] += gap
    return np.clip(lam, 0.0, None)


def waterfill_rate(sigma_sq, p_total):
    """Best achievable spectral efficiency at the given power budget."""
    lam = waterfill_max_rate(sigma_sq, p_total)
    return float(np.sum(np.log2(1.0 + lam * np.asarray(sigma_sq, dtype=float))))


class _WaterfillTable:
    """Closed-form water-filled rate as a piecewise function of the budget.

    With the positive gains sorted descending and inv = 1/gain, mode k+1
    becomes active once the budget exceeds t_k = (k) * inv[k] - cum[k];
    between breakpoints the rate is m*log2((p+cum[m])/m) + sum log2(gain).
    Precomputing the breakpoints makes each rate query O(log n) with no
    array temporaries, which matters inside nested 1-D searches.
    """

    __slots__ = ("inv", "cum", "loggain", "thresholds", "n")

    def __init__(self, sigma_sq):
        sig = np.sort(np.asarray(sigma_sq, dtype=float)[
            np.asarray(sigma_sq, dtype=float) > 0])[::-1]
        self.n = sig.size
        if self.n == 0:
            self.inv = self.cum = self.loggain = self.thresholds = None
            return
        self.inv = 1.0 / sig
        self.cum = np.concatenate([[0.0], np.cumsum(self.inv)])
        self.loggain = np.concatenate([[0.0], np.cumsum(np.log2(sig))])
        # budget at which mode m+1 starts receiving power
        self.thresholds = np.array(
            [(m + 1) * self.inv[m] - self.cum[m + 1] for m in range(self.n)])

    def rate(self, p):
        if self.n == 0 or p <= 0.0:
            return 0.0
        m = int(np.searchsorted(self.thresholds, p, side="right"))
        m = max(1, min(m, self.n))
        level = (p + self.cum[m]) / m
        return m * math.log2(level) + float(self.loggain[m])


def min_power_for_rate(sigma_sq, rate_floor, p_hint=1.0, iters=200, table=None):
    """Smallest total power whose water-filled rate reaches rate_floor.

    Returns inf when no finite power suffices (all-zero gains).
    """
    if rate_floor <= 0.0:
        return 0.0
    wf = table if table is not None else _WaterfillTable(sigma_sq)
    if wf.n == 0:
        return math.inf
    hi = max(p_hint, 1e-30)
    while wf.rate(hi) < rate_floor:
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if wf.rate(mid) >= rate_floor:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    return hi


# ---------------------------------------------------------------------------
# 1-D feasibility probe and fractional bisection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityResult:
    """Outcome of the power-sweep feasibility probe."""

    feasible: bool
    allocation: np.ndarray | None
    power: float
    rate: float


def p81_feasible(sigma_sq, delta, coeff, r_min, p_max, table=None):
    """Decide whether some allocation meets both the rate floor and the
    energy-slope constraint (coeff / delta) * p <= rate at budget p <= p_max.

    The margin rate*(p) - max(r_min, slope * p) is concave in the total power
    p (water-filled rate is concave, the penalty is a max of affines) and its
    maximizer has a closed form: below the crossover p_x = r_min / slope the
    envelope is the constant r_min and the margin rises with p, above it the
    stationary point solves m / ((p + cum_m) ln 2) = slope segment by segment.
    Near the optimal delta the feasible band of p is far thinner than any
    practical search tolerance, so the maximum must be evaluated exactly.
    """
    if delta <= 0.0:
        raise ValueError("delta must be strictly positive")
    if p_max < 0.0:
        raise ValueError("p_max must be nonnegative")
    sig = np.asarray(sigma_sq, dtype=float)
    if r_min <= 0.0:
        # the empty allocation already satisfies every constraint
        return FeasibilityResult(True, np.zeros_like(sig), 0.0, 0.0)
    wf = table if table is not None else _WaterfillTable(sig)
    slope = coeff / delta

    def margin(p):
        return wf.rate(p) - max(r_min, slope * p)

    p_x = r_min / slope if slope > 0.0 else p_max
    candidates = [min(p_x, p_max), p_max]
    if slope > 0.0 and wf.n:
        target = 1.0 / (slope * math.log(2.0))
        for m in range(1, wf.n + 1):
            p_stat = m * target - float(wf.cum[m])
            if p_x <= p_stat <= p_max:
                candidates.append(p_stat)
    best_val, best_p = max((margin(p), p) for p in candidates)
    if best_val >= -1e-12 * max(1.0, abs(r_min)):
        return FeasibilityResult(True, waterfill_max_rate(sig, best_p), best_p,
                                 waterfill_rate(sig, best_p))
    return FeasibilityResult(False, None, best_p, waterfill_rate(sig, best_p))


@dataclass(frozen=True)
class P61Result:
    """Minimizer of the fractional offload-energy objective over one link."""

    allocation: np.ndarray
    delta: float
    rate: float
    power: float


def bisect_p61(sigma_sq, coeff, r_min, p_max, tol=1e-6):
    """Minimize coeff * sum(lam) / rate(lam) subject to the rate floor.

    The epigraph value delta is feasible iff the probe ``p81_feasible``
    succeeds, and feasibility is monotone in delta, so a bisection with
    relative tolerance ``tol`` pins the optimum. Returns the value and a
    witness allocation. Raises RateConstraintInfeasibleError when even the
    full power budget cannot reach the rate floor.
    """
    sig = np.asarray(sigma_sq, dtype=float)
    if coeff < 0.0:
        raise ValueError("coeff must be nonnegative")
    if coeff == 0.0 and r_min <= 0.0:
        return P61Result(np.zeros_like(sig), 0.0, 0.0, 0.0)
    wf = _WaterfillTable(sig)
    cap_rate = wf.rate(p_max)
    if cap_rate < r_min * (1.0 - 1e-12):
        raise RateConstraintInfeasibleError(
            f"rate floor {r_min:.6g} bit/s/Hz above full-power capacity {cap_rate:.6g}")
    if coeff == 0.0:
        p_star = min(min_power_for_rate(sig, r_min, p_hint=p_max, table=wf), p_max)
        lam = waterfill_max_rate(sig, p_star)
        return P61Result(lam, 0.0, waterfill_rate(sig, p_star), p_star)
    if r_min <= 0.0:
        # the empty allocation is admissible at any positive delta, so the
        # infimum collapses to zero
        return P61Result(np.zeros_like(sig), 0.0, 0.0, 0.0)

    hi = coeff * p_max / max(r_min, 1e-12)
    hi0 = hi
    witness = p81_feasible(sig, hi, coeff, r_min, p_max, table=wf)
    doublings = 0
    while not witness.feasible:
        hi *= 2.0
        doublings += 1
        if hi > hi0 * 2.0**60:
            raise RateConstraintInfeasibleError(
                "no feasible epigraph value within 2^60 of the nominal bracket")
        witness = p81_feasible(sig, hi, coeff, r_min, p_max, table=wf)
    lo = 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        probe = p81_feasible(sig, mid, coeff, r_min, p_max, table=wf)
        if probe.feasible:
            hi, witness = mid, probe
        else:
            lo = mid
    return P61Result(witness.allocation, hi, witness.rate, witness.power)


# ---------------------------------------------------------------------------
# real parametrization of Hermitian matrices
# ---------------------------------------------------------------------------

def hermitian_basis(n):
    """Orthogonal (not normalized) real basis of n x n Hermitian matrices.

    Layout: n diagonal indicators first, then for each pair i < j the real
    and imaginary off-diagonal generators. Length n^2.
    """
    mats = []
    for i in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[i, i] = 1.0
        mats.append(e)
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[i, j] = 1.0
            e[j, i] = 1.0
            mats.append(e)
            e = np.zeros((n, n), dtype=complex)
            e[i, j] = 1.0j
            e[j, i] = -1.0j
            mats.append(e)
    return np.array(mats)


def theta_from_matrix(s):
    """Coordinates of a Hermitian matrix in the hermitian_basis layout."""
    s = np.asarray(s, dtype=complex)
    n = s.shape[0]
    theta = [float(np.real(s[i, i])) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            theta.append(float(np.real(s[i, j])))
            theta.append(float(np.imag(s[i, j])))
    return np.array(theta)


def matrix_from_theta(theta, basis):
    """Inverse of theta_from_matrix given the matching basis array."""
    return np.tensordot(np.asarray(theta, dtype=float), basis, axes=1)


# ---------------------------------------------------------------------------
# tangent overestimate of the interference log-det
# ---------------------------------------------------------------------------

def logdet2_tangent(base, h, anchor):
    """First-order expansion of S -> log2 det(base + h S h^H) at the anchor.

    The map is concave in S, so its tangent plane is a global overestimate.
    Returns (constant, gradient) with the affine form
    constant + Re tr(gradient @ S), gradient Hermitian, in base-2 units.
    """
    base = np.asarray(base, dtype=complex)
    h = np.asarray(h, dtype=complex)
    anchor = np.asarray(anchor, dtype=complex)
    m = hermitian_part(base + h @ anchor @ h.conj().T)
    minv = np.linalg.solve(m, np.eye(m.shape[0], dtype=complex))
    grad = hermitian_part(h.conj().T @ minv @ h) / LN2
    const = logdet2_psd(m) - float(np.real(np.trace(grad @ anchor)))
    return const, grad


# ---------------------------------------------------------------------------
# convex surrogate problem and its barrier solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UpstreamTerm:
    """Data of one earlier-decoded user inside the surrogate.

    interference_base is its interference floor with the variable user
    removed; signal is its own received covariance. The user's rate seen as
    a function of the variable covariance S is then

        log2 det(interference_base + signal + h S h^H)
            - log2 det(interference_base + h S h^H)

    whose second (concave) term the surrogate replaces by its tangent plane.
    energy_coeff scales the offload-energy epigraph (zero disables it);
    rate_floor is the spectral efficiency its deadline demands.
    """

    interference_base: np.ndarray
    signal: np.ndarray
    energy_coeff: float
    rate_floor: float


@dataclass(frozen=True)
class SurrogateProblem:
    """One convex subproblem of the successive refinement for a later user.

    Fields fix everything except the user's covariance: its channel, the
    interference it sees, its rate floor and energy coefficient, the power
    budget, the earlier-decoded users it disturbs, the expansion anchor
    (covariance and power-proxy xi) and the penalty weight coupling the
    proxy to the trace. ``penalty`` is dimensionless (objective-normalized).
    """

    h_var: np.ndarray
    q_own: np.ndarray
    own_energy_coeff: float
    own_rate_floor: float
    p_max: float
    upstream: tuple
    anchor_cov: np.ndarray
    anchor_xi: float
    penalty: float

    def __post_init__(self):
        if len(self.upstream) == 0:
            raise ValueError(
                "no earlier-decoded users: the first user takes the whitened path")
        if not self.penalty > 0.0:
            raise ValueError("penalty must be strictly positive")
        if not self.own_energy_coeff > 0.0:
            raise ValueError("own_energy_coeff must be strictly positive")
        tr = float(np.real(np.trace(self.anchor_cov)))
        if tr > self.p_max * (1.0 + 1e-9):
            raise ValueError("anchor trace exceeds the power budget")
        if self.anchor_xi < 0.0:
            raise ValueError("anchor_xi must be nonnegative")


@dataclass
class SurrogateSolution:
    """Solver output in physical units plus convergence diagnostics."""

    covariance: np.ndarray
    delta: float
    xi: float
    epigraphs: np.ndarray
    objective: float
    kkt_residual: float
    closure_gap: float  # (trace - xi^2) / max(trace, power scale)
    penalty_physical: float
    barrier_stages: int
    newton_steps: int



def solve_surrogate(problem, tol=1e-6, max_newton=2000, warm=None):
    """Solve the convex surrogate to the requested duality-gap tolerance.

    Two-phase logarithmic barrier: phase one maximizes the minimum
    constraint slack from a heuristic start until a strictly interior point
    exists (raising SurrogateInfeasibleError if none does); phase two
    follows the central path, multiplying the barrier weight by 10 per
    stage until the gap estimate (cone parameter over weight, in normalized
    objective units) drops below ``tol``. Newton systems are assembled
    exactly over the real coordinates of the Hermitian covariance and the
    scalar epigraph variables; log-determinants go through batched Cholesky
    factorizations and a failed factorization backtracks the line search.

    ``warm`` may carry the SurrogateSolution of a neighboring problem (same
    upstream ordering); when it is strictly feasible here the central path
    is entered at a higher weight, which is much cheaper. The reported
    kkt_residual is the centering residual: the gradient norm of the
    weighted objective-plus-barrier at the final iterate divided by the
    final weight.
    """
    solver = _BarrierSolver(problem, tol)
    return solver.solve(max_newton, warm)


class _BarrierSolver:
    def __init__(self, problem, tol):
        self.pb = problem
        self.tol = tol
        h = np.asarray(problem.h_var, dtype=complex)
        self.n_tx = h.shape[1]
        self.n_rx = h.shape[0]
        self.basis = hermitian_basis(self.n_tx)
        self.dim_theta = self.n_tx**2

        # --- power scale: put the operating covariance at order one
        q_own = hermitian_part(np.asarray(problem.q_own, dtype=complex))
        anchor = hermitian_part(np.asarray(problem.anchor_cov, dtype=complex))
        tr_anchor = max(0.0, float(np.real(np.trace(anchor))))
        self.sig_own = eigen_decompose(whiten(q_own), h).singular_values_sq
        p_req = min_power_for_rate(self.sig_own, problem.own_rate_floor,
                                   p_hint=problem.p_max)
        if not math.isfinite(p_req):
            p_req = problem.p_max
        self.ps = max(tr_anchor, p_req, problem.p_max * 1e-12)
        self.ps = min(self.ps, problem.p_max)
        self.hs = h * math.sqrt(self.ps)
        self.hs_h = self.hs.conj().T

        # --- energy scale
        coeffs = [problem.own_energy_coeff * self.ps]
        coeffs += [u.energy_coeff for u in problem.upstream if u.energy_coeff > 0.0]
        self.es = max(coeffs)
        self.kappa = problem.own_energy_coeff * self.ps / self.es

        # --- stacked log-det bases: row 0 the user's own link, one row per
        # constrained earlier-decoded user
        self.own_const = logdet2_psd(q_own)
        bases = [q_own]
        g2cs, wrows, up_meta = [], [], []
        t_count = 0
        for u in problem.upstream:
            if u.energy_coeff <= 0.0 and u.rate_floor <= 0.0:
                continue
            base_other = hermitian_part(np.asarray(u.interference_base, dtype=complex))
            c1 = hermitian_part(base_other + np.asarray(u.signal, dtype=complex))
            g2c, g2g = logdet2_tangent(base_other, h, anchor)
            bases.append(c1)
            g2cs.append(g2c)
            wrows.append(self.ps * np.einsum("ij,mji->m", g2g, self.basis).real)
            has_epi = u.energy_coeff > 0.0
            t_slot = -1
            if has_epi:
                t_slot = t_count
                t_count += 1
            up_meta.append((has_epi, t_slot, u.energy_coeff / self.es, u.rate_floor))
        self.bases = np.stack(bases)
        self.g2c = np.array(g2cs) if g2cs else np.zeros(0)
        self.wmat = np.stack(wrows) if wrows else np.zeros((0, self.dim_theta))
        self.up_meta = up_meta
        self.n_up = len(up_meta)
        self.gmats = np.einsum("ra,mab,sb->mrs", self.hs, self.basis, self.hs.conj())

        self.m_t = t_count
        self.dim = self.dim_theta + 2 + self.m_t
        self.i_dlt = self.dim_theta
        self.i_xi = self.dim_theta + 1
        self.i_t0 = self.dim_theta + 2

        self.p_norm = problem.p_max / self.ps
        self.r_own = problem.own_rate_floor
        self.xi_anchor = max(problem.anchor_xi / math.sqrt(self.ps), 1e-6)
        self.pen = problem.penalty

        self.n_cons = 2 + (1 if self.r_own > 0.0 else 0) + 1
        self.n_cons += sum((1 if m[0] else 0) + (1 if m[3] > 0.0 else 0)
                           for m in up_meta)
        # cone parameter: scalar constraints + PSD cone + positive scalars
        self.nu = self.n_cons + self.n_tx + 2 + self.m_t

        g0 = np.zeros(self.dim)
        g0[: self.n_tx] = self.pen
        g0[self.i_dlt] = 1.0
        g0[self.i_xi] = -2.0 * self.pen * self.xi_anchor
        g0[self.i_t0:] = 1.0
        self.g0 = g0
        self.newton_steps = 0
        self.stages = 0
        self._tau_final = 1.0

    # -- shared geometry ---------------------------------------------------
    def f0(self, z):
        return float(self.g0 @ z) + self.pen * self.xi_anchor**2

    def _prepare(self, z):
        """Domain check plus raw constraint values; None outside the domain.

        Returns (chol_s, m_stack, chols, rho_own, rhohat, cvals, s_tilde).
        """
        theta = z[: self.dim_theta]
        dlt = z[self.i_dlt]
        xi = z[self.i_xi]
        ts = z[self.i_t0: self.dim]
        if dlt <= 0.0 or xi <= 0.0 or np.any(ts <= 0.0):
            return None
        s_tilde = matrix_from_theta(theta, self.basis)
        try:
            chol_s = np.linalg.cholesky(s_tilde)
        except np.linalg.LinAlgError:
            return None
        sand = self.hs @ s_tilde @ self.hs_h
        m = self.bases + sand
        try:
            chols = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            return None
        diag = np.einsum("bii->bi", chols).real
        logdets = np.sum(np.log(diag), axis=1) * (2.0 / LN2)
        rho_own = logdets[0] - self.own_const
        rhohat = logdets[1:] - self.g2c - (self.wmat @ theta if self.n_up else 0.0)

        tr_theta = float(theta[: self.n_tx].sum())
        cvals = np.empty(self.n_cons)
        cvals[0] = self.p_norm - tr_theta
        cvals[1] = tr_theta - xi * xi
        i = 2
        if self.r_own > 0.0:
            cvals[i] = rho_own - self.r_own
            i += 1
        quad = self.kappa * xi * xi / dlt
        cvals[i] = rho_own - quad
        i += 1
        for k, (has_epi, t_slot, cep, rfloor) in enumerate(self.up_meta):
            if has_epi:
                cvals[i] = rhohat[k] - cep / ts[t_slot]
                i += 1
            if rfloor > 0.0:
                cvals[i] = rhohat[k] - rfloor
                i += 1
        return chol_s, m, chols, rho_own, rhohat, cvals, s_tilde

    def constraint_values(self, z):
        pre = self._prepare(z)
        return None if pre is None else pre[5]

    def value(self, z, tau, slack_mode):
        """Barrier objective value only; None outside the open domain."""
        zc = z[: self.dim]
        pre = self._prepare(zc)
        if pre is None:
            return None
        chol_s, _, _, _, _, cvals, _ = pre
        if slack_mode:
            cvals = cvals + z[-1]
        if np.any(cvals <= 0.0):
            return None
        phi = -float(np.sum(np.log(cvals)))
        phi -= 2.0 * float(np.sum(np.log(np.real(np.diag(chol_s)))))
        phi -= math.log(zc[self.i_dlt]) + math.log(zc[self.i_xi])
        if self.m_t:
            phi -= float(np.sum(np.log(zc[self.i_t0:])))
        if slack_mode:
            return tau * z[-1] + phi
        return tau * self.f0(zc) + phi

    def full(self, z, tau, slack_mode):
        """Value, gradient and Hessian of the barrier objective."""
        zc = z[: self.dim]
        pre = self._prepare(zc)
        if pre is None:
            return None
        chol_s, m, chols, rho_own, rhohat, cvals_raw, s_tilde = pre
        cvals = cvals_raw + z[-1] if slack_mode else cvals_raw
        if np.any(cvals <= 0.0):
            return None
        theta = zc[: self.dim_theta]
        dlt = zc[self.i_dlt]
        xi = zc[self.i_xi]
        ts = zc[self.i_t0:]
        dtot = self.dim + (1 if slack_mode else 0)

        eye = np.eye(self.n_rx, dtype=complex)
        minv = np.linalg.solve(m, np.broadcast_to(eye, m.shape).copy())
        gr = np.einsum("bij,mji->bm", minv, self.gmats).real / LN2
        wb = np.einsum("bij,mjk->bmik", minv, self.gmats)
        hb = -np.einsum("bmik,blki->bml", wb, wb).real / LN2
        g_own = gr[0]
        g_up = gr[1:] - self.wmat if self.n_up else gr[1:]

        # per-constraint gradients, fixed layout matching _prepare
        gmat = np.zeros((self.n_cons, dtot))
        block_coef = np.zeros(1 + self.n_up)  # -1/c weights per log-det row
        sparse = []  # (i, j, value) curvature entries scaled by -1/c
        gmat[0, : self.n_tx] = -1.0
        gmat[1, : self.n_tx] = 1.0
        gmat[1, self.i_xi] = -2.0 * xi
        sparse.append((1, self.i_xi, self.i_xi, -2.0))
        i = 2
        if self.r_own > 0.0:
            gmat[i, : self.dim_theta] = g_own
            block_coef[0] -= 1.0 / cvals[i]
            i += 1
        quad = self.kappa * xi * xi / dlt
        gmat[i, : self.dim_theta] = g_own
        gmat[i, self.i_xi] = -2.0 * self.kappa * xi / dlt
        gmat[i, self.i_dlt] = quad / dlt
        block_coef[0] -= 1.0 / cvals[i]
        sparse.append((i, self.i_xi, self.i_xi, -2.0 * self.kappa / dlt))
        sparse.append((i, self.i_xi, self.i_dlt, 2.0 * self.kappa * xi / dlt**2))
        sparse.append((i, self.i_dlt, self.i_xi, 2.0 * self.kappa * xi / dlt**2))
        sparse.append((i, self.i_dlt, self.i_dlt, -2.0 * quad / dlt**2))
        i += 1
        for k, (has_epi, t_slot, cep, rfloor) in enumerate(self.up_meta):
            if has_epi:
                t_k = ts[t_slot]
                gmat[i, : self.dim_theta] = g_up[k]
                gmat[i, self.i_t0 + t_slot] = cep / t_k**2
                block_coef[1 + k] -= 1.0 / cvals[i]
                sparse.append((i, self.i_t0 + t_slot, self.i_t0 + t_slot,
                               -2.0 * cep / t_k**3))
                i += 1
            if rfloor > 0.0:
                gmat[i, : self.dim_theta] = g_up[k]
                block_coef[1 + k] -= 1.0 / cvals[i]
                i += 1
        if slack_mode:
            gmat[:, -1] = 1.0

        inv_c = 1.0 / cvals
        grad = np.zeros(dtot)
        grad -= gmat.T @ inv_c
        scaled = gmat * inv_c[:, None]
        hess = scaled.T @ scaled
        # curvature of the log-det constraints, grouped per stacked row
        hess[: self.dim_theta, : self.dim_theta] += np.einsum(
            "b,bml->ml", block_coef, hb)
        for ci, i_, j_, v in sparse:
            hess[i_, j_] += (-1.0 / cvals[ci]) * v

        # domain barriers (never slacked)
        s_inv = np.linalg.solve(s_tilde, np.eye(self.n_tx, dtype=complex))
        grad[: self.dim_theta] -= np.einsum("ij,mji->m", s_inv, self.basis).real
        grad[self.i_dlt] -= 1.0 / dlt
        grad[self.i_xi] -= 1.0 / xi
        if self.m_t:
            grad[self.i_t0: self.dim] -= 1.0 / ts
        v_s = np.einsum("ij,mjk->mik", s_inv, self.basis)
        hess[: self.dim_theta, : self.dim_theta] += np.einsum(
            "mik,lki->ml", v_s, v_s).real
        hess[self.i_dlt, self.i_dlt] += 1.0 / dlt**2
        hess[self.i_xi, self.i_xi] += 1.0 / xi**2
        for j in range(self.m_t):
            hess[self.i_t0 + j, self.i_t0 + j] += 1.0 / ts[j] ** 2

        # barrier value
        phi = -float(np.sum(np.log(cvals)))
        phi -= 2.0 * float(np.sum(np.log(np.real(np.diag(chol_s)))))
        phi -= math.log(dlt) + math.log(xi)
        if self.m_t:
            phi -= float(np.sum(np.log(ts)))
        if slack_mode:
            val = tau * z[-1] + phi
            grad[-1] += tau
        else:
            val = tau * self.f0(zc) + phi
            grad[: self.dim] += tau * self.g0
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            return None
        return val, grad, hess, cvals_raw, gmat

    # -- Newton inner loop ---------------------------------------------------
    def _newton(self, z, tau, slack_mode, max_steps, stop_feasible=False):
        cur = self.full(z, tau, slack_mode)
        if cur is None:
            raise NumericalFailureError(
                "barrier evaluation failed at the start point", iterate=z.copy())
        for _ in range(max_steps):
            val, grad, hess, cvals, gmat = cur
            if stop_feasible and slack_mode:
                if float(np.min(cvals)) > 1e-9 * max(1.0, abs(z[-1])):
                    return z, val, 0.0
            reg = 1e-12 * max(1.0, float(np.abs(np.diag(hess)).max()))
            step = None
            for _ in range(6):
                try:
                    step = np.linalg.solve(hess + reg * np.eye(hess.shape[0]), -grad)
                    break
                except np.linalg.LinAlgError:
                    reg *= 100.0
            if step is None:
                raise NumericalFailureError("Newton system unsolvable",
                                            iterate=z.copy())
            decrement2 = float(-grad @ step)
            if decrement2 <= 2e-9:
                return z, val, decrement2
            # keep the positive scalars strictly positive before probing
            alpha = 1.0
            scalar_lo = self.i_dlt
            for i in range(scalar_lo, self.dim):
                if step[i] < 0.0:
                    alpha = min(alpha, -0.97 * z[i] / step[i])
            # first-order cap against the inequality boundaries; the probe
            # loop below still guards the nonlinear remainder
            c_eff = cvals + z[-1] if slack_mode else cvals
            dirs = gmat @ step
            closing = dirs < 0.0
            if np.any(closing):
                alpha = min(alpha, float(np.min(
                    -0.99 * c_eff[closing] / dirs[closing])))
            z_new = None
            while alpha > 1e-14:
                z_try = z + alpha * step
                v = self.value(z_try, tau, slack_mode)
                if v is not None and v <= val - 0.05 * alpha * decrement2:
                    z_new = z_try
                    break
                alpha *= 0.5
            if z_new is None:
                return z, val, decrement2  # flat to machine precision
            nxt = self.full(z_new, tau, slack_mode)
            if nxt is None:
                return z, val, decrement2
            z, cur = z_new, nxt
            self.newton_steps += 1
        return z, cur[0], float("inf")

    # -- initial point helpers -------------------------------------------
    def _scalar_fill(self, theta):
        """Slack-consistent scalars (delta, xi, t) for a given covariance."""
        z = np.zeros(self.dim)
        z[: self.dim_theta] = theta
        z[self.i_dlt] = 1.0
        z[self.i_xi] = 1.0
        z[self.i_t0:] = 1.0
        pre = self._prepare(z)
        tr = max(float(theta[: self.n_tx].sum()), 1e-12)
        xi = math.sqrt(tr) * (1.0 - 1e-6)
        if pre is None:
            z[self.i_xi] = xi
            return z
        rho_own, rhohat = pre[3], pre[4]
        dlt = self.kappa * xi * xi / (rho_own * (1.0 - 1e-3)) if rho_own > 0 else 1.0
        z[self.i_dlt] = max(dlt, 1e-12)
        z[self.i_xi] = xi
        for k, (has_epi, t_slot, cep, _) in enumerate(self.up_meta):
            if not has_epi:
                continue
            rh = rhohat[k]
            z[self.i_t0 + t_slot] = cep / rh * (1.0 + 1e-3) + 1e-9 if rh > 0 else 1.0
        return z

    def _candidates(self):
        cands = []
        anchor = hermitian_part(np.asarray(self.pb.anchor_cov, dtype=complex)) / self.ps
        tr_anchor = float(np.real(np.trace(anchor)))
        if tr_anchor > 1e-12:
            ridge = 1e-8 * max(tr_anchor / self.n_tx, 1.0)
            cands.append(theta_from_matrix(anchor + ridge * np.eye(self.n_tx)))
        # water-filled covariance meeting the own rate floor with margin;
        # usually strictly feasible when the surrogate has an interior
        if self.r_own > 0.0 and np.any(self.sig_own > 0):
            p_req = min_power_for_rate(self.sig_own, self.r_own, p_hint=self.ps)
            if math.isfinite(p_req) and p_req < self.pb.p_max:
                # singular vectors of the whitened own link
                a = whiten(hermitian_part(np.asarray(self.pb.q_own, dtype=complex)))
                eig = eigen_decompose(a, np.asarray(self.pb.h_var, dtype=complex))
                for boost in (1.05, 1.5, 4.0):
                    p_try = min(p_req * boost, self.pb.p_max * (1.0 - 1e-9))
                    lam = waterfill_max_rate(eig.singular_values_sq, p_try)
                    s_cand = (eig.right_vectors * lam) @ eig.right_vectors.conj().T
                    s_cand = s_cand / self.ps + 1e-8 * (p_try / self.ps) * np.eye(self.n_tx)
                    cands.append(theta_from_matrix(s_cand))
        iso = self.p_norm / (2.0 * self.n_tx)
        for k in range(0, 8):
            cands.append(theta_from_matrix(iso * 0.5**k * np.eye(self.n_tx)))
        return cands

    def _min_slack(self, z):
        cvals = self.constraint_values(z)
        return -math.inf if cvals is None else float(np.min(cvals))

    # -- driver ------------------------------------------------------------
    def solve(self, max_newton, warm=None):
        tau0 = 1.0
        z = None
        if warm is not None:
            zw = self._warm_point(warm)
            if zw is not None:
                # skip the earliest stages; entering too late freezes the
                # iterate against the boundary when the problem has moved
                z, tau0 = zw, 100.0
        if z is None:
            best_z, best_slack = None, -math.inf
            for theta in self._candidates():
                cand = self._scalar_fill(theta)
                slack = self._min_slack(cand)
                if slack > best_slack:
                    best_z, best_slack = cand, slack
                if slack > 1e-10:
                    break
            if best_z is None:
                raise SurrogateInfeasibleError("no evaluable start point")
            z = best_z
            if best_slack <= 1e-10:
                z = self._phase_one(z, best_slack)
        z = self._phase_two(z, tau0, max_newton)
        return self._package(z)

    def _warm_point(self, warm):
        cov = hermitian_part(np.asarray(warm.covariance, dtype=complex)) / self.ps
        tr = float(np.real(np.trace(cov)))
        if tr <= 0.0:
            return None
        cov = cov + 1e-10 * (tr / self.n_tx) * np.eye(self.n_tx)
        z = np.zeros(self.dim)
        z[: self.dim_theta] = theta_from_matrix(cov)
        z[self.i_dlt] = warm.delta / self.es
        z[self.i_xi] = warm.xi / math.sqrt(self.ps)
        if self.m_t:
            eps_t = np.asarray(warm.epigraphs, dtype=float) / self.es
            if eps_t.size != self.m_t:
                return None
            z[self.i_t0:] = eps_t * (1.0 + 1e-6) + 1e-12
        slack = self._min_slack(z)
        if slack <= 1e-12:
            return None
        return z

    def _phase_one(self, z, slack0):
        s = max(0.0, -slack0) + 0.1 * max(1.0, abs(slack0))
        zz = np.concatenate([z, [s]])
        tau = 1.0
        for _ in range(24):
            zz, _, dec = self._newton(zz, tau, slack_mode=True,
                                      max_steps=60, stop_feasible=True)
            cvals = self.constraint_values(zz[:-1])
            if cvals is not None and float(np.min(cvals)) > 0.0:
                return zz[:-1]
            tau *= 10.0
            if tau > 1e12 and dec < 1e-8:
                break
        raise SurrogateInfeasibleError(
            "constraints admit no strictly interior covariance")

    def _phase_two(self, z, tau0, max_newton):
        tau = tau0
        while True:
            self.stages += 1
            z, _, _ = self._newton(z, tau, slack_mode=False, max_steps=150)
            if self.nu / tau <= self.tol:
                break
            tau *= 10.0
            if self.newton_steps > max_newton:
                break
        self._tau_final = tau
        return z

    def _package(self, z):
        s_phys = hermitian_part(
            matrix_from_theta(z[: self.dim_theta], self.basis)) * self.ps
        res = self.full(z, self._tau_final, slack_mode=False)
        if res is None:
            raise NumericalFailureError("final iterate left the domain",
                                        iterate=z.copy())
        kkt = float(np.abs(res[1]).max()) / self._tau_final
        tr = float(np.real(np.trace(s_phys)))
        xi_phys = z[self.i_xi] * math.sqrt(self.ps)
        closure = (tr - xi_phys**2) / max(tr, self.ps * 1e-9)
        return SurrogateSolution(
            covariance=s_phys,
            delta=z[self.i_dlt] * self.es,
            xi=xi_phys,
            epigraphs=z[self.i_t0:] * self.es,
            objective=self.es * self.f0(z),
            kkt_residual=kkt,
            closure_gap=closure,
            penalty_physical=self.pen * self.es / self.ps,
            barrier_stages=self.stages,
            newton_steps=self.newton_steps,
        )
