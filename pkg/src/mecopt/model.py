"""Physical layer and workload model.

Holds the immutable value types (system constants, tasks, channels, transmit
covariances, offloading decisions) and the bookkeeping operations built on
them: interference-plus-noise covariances under successive decoding,
achievable uplink rates, per-user energy/latency accounting and the
constraint audit. Everything here is a pure function of its arguments; all
container types are frozen after construction.

Rates are measured in bit/s (base-2 logarithms throughout the package).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FrequencyZeroError, OffloadRateZeroError

__all__ = [
    "LN2",
    "ModelAssumptionWarning",
    "SystemParams",
    "TaskSpec",
    "ChannelSet",
    "PrecoderSet",
    "OffloadDecision",
    "EnergyBreakdown",
    "ConstraintCheck",
    "FeasibilityReport",
    "interference_covariance",
    "achievable_rate",
    "evaluate",
    "check_constraints",
    "logdet2_psd",
    "hermitian_part",
]

LN2 = math.log(2.0)


class ModelAssumptionWarning(UserWarning):
    """Raised when a soft model assumption (not a hard invariant) is violated."""


def hermitian_part(m):
    """Return the Hermitian part (m + m^H)/2 of a square matrix."""
    return 0.5 * (m + m.conj().T)


def logdet2_psd(m):
    """Base-2 log-determinant of a Hermitian positive definite matrix.

    Evaluated through a Cholesky factorization; raises
    ``numpy.linalg.LinAlgError`` if the matrix is not positive definite.
    """
    chol = np.linalg.cholesky(hermitian_part(np.asarray(m, dtype=complex)))
    return 2.0 * float(np.sum(np.log2(np.real(np.diag(chol)))))


def _locked(arr, dtype=complex):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class SystemParams:
    """Radio and compute constants shared by all users.

    Attributes:
        n_users: number of uplink users.
        n_tx: transmit antennas per user.
        n_rx: receive antennas at the edge server.
        bandwidth_hz: uplink bandwidth in Hz.
        noise_density_w_per_hz: one-sided noise power spectral density in W/Hz.
        p_max_w: per-user transmit power budget in W.
        f_max_hz: per-user CPU frequency cap in cycles/s.
        eta: effective switched-capacitance coefficient of the CPUs.
    """

    n_users: int
    n_tx: int
    n_rx: int
    bandwidth_hz: float
    noise_density_w_per_hz: float
    p_max_w: float
    f_max_hz: float
    eta: float

    def __post_init__(self):
        _require(self.n_users >= 1, "n_users must be at least 1")
        _require(self.n_tx >= 1, "n_tx must be at least 1")
        _require(self.n_rx >= 1, "n_rx must be at least 1")
        _require(self.bandwidth_hz > 0, "bandwidth_hz must be positive")
        _require(self.noise_density_w_per_hz > 0, "noise_density_w_per_hz must be positive")
        _require(self.p_max_w > 0, "p_max_w must be positive")
        _require(self.f_max_hz > 0, "f_max_hz must be positive")
        _require(self.eta > 0, "eta must be positive")
        if self.n_tx >= self.n_rx:
            warnings.warn(
                "n_tx >= n_rx: receive array does not oversample the transmit "
                "streams; decoding still works but spatial headroom is reduced",
                ModelAssumptionWarning,
                stacklevel=2,
            )

    @property
    def noise_power_w(self):
        """Receiver noise power over the full band: density times bandwidth."""
        return self.noise_density_w_per_hz * self.bandwidth_hz


@dataclass(frozen=True)
class TaskSpec:
    """One user's computation task.

    Attributes:
        data_bits: task input size in bits.
        cycles_per_bit: CPU cycles required per input bit.
        deadline_s: completion deadline in seconds.
    """

    data_bits: float
    cycles_per_bit: float
    deadline_s: float

    def __post_init__(self):
        _require(self.data_bits > 0, "data_bits must be positive")
        _require(self.cycles_per_bit > 0, "cycles_per_bit must be positive")
        _require(self.deadline_s > 0, "deadline_s must be positive")

    @property
    def total_cycles(self):
        return self.cycles_per_bit * self.data_bits


@dataclass(frozen=True)
class ChannelSet:
    """Per-user uplink MIMO channels plus the successive decoding order.

    ``decoding_order`` lists user indices in the order the receiver decodes
    them: the first entry is decoded first (sees everyone later as
    interference), the last entry is decoded last (interference-free).
    """

    channels: tuple
    decoding_order: tuple

    def __post_init__(self):
        chans = tuple(_locked(h) for h in self.channels)
        object.__setattr__(self, "channels", chans)
        order = tuple(int(k) for k in self.decoding_order)
        object.__setattr__(self, "decoding_order", order)
        _require(len(chans) >= 1, "at least one channel required")
        shape = chans[0].shape
        _require(len(shape) == 2, "channels must be 2-D matrices")
        for k, h in enumerate(chans):
            _require(h.shape == shape, f"channel {k}: shape {h.shape} != {shape}")
            _require(np.all(np.isfinite(h)), f"channel {k}: non-finite entries")
        _require(sorted(order) == list(range(len(chans))),
                 "decoding_order must be a permutation of the user indices")

    @property
    def n_users(self):
        return len(self.channels)

    @property
    def n_rx(self):
        return self.channels[0].shape[0]

    @property
    def n_tx(self):
        return self.channels[0].shape[1]

    def position(self, k):
        """Index of user k within the decoding order."""
        return self.decoding_order.index(k)

    def decoded_after(self, k):
        """Users decoded after user k (still unresolved, hence interference)."""
        return self.decoding_order[self.position(k) + 1:]

    def decoded_before(self, k):
        """Users decoded before user k (already cancelled at its stage)."""
        return self.decoding_order[:self.position(k)]


# Numeric guards for covariance sanitation: eigenvalues in [-PSD_TOL, 0) are
# rounded up to zero, anything below -PSD_TOL is rejected.
PSD_TOL = 1e-10
HERM_TOL = 1e-10
TRACE_TOL = 1e-9


@dataclass(frozen=True)
class PrecoderSet:
    """Per-user transmit covariance matrices (Hermitian PSD)."""

    covariances: tuple

    def __post_init__(self):
        covs = tuple(_locked(s) for s in self.covariances)
        object.__setattr__(self, "covariances", covs)
        for k, s in enumerate(covs):
            _require(s.shape[0] == s.shape[1], f"covariance {k} must be square")
            scale = max(1.0, float(np.abs(s).max(initial=0.0)))
            _require(np.abs(s - s.conj().T).max(initial=0.0) <= HERM_TOL * scale,
                     f"covariance {k} is not Hermitian")
            w = np.linalg.eigvalsh(hermitian_part(s))
            _require(w.min(initial=0.0) >= -PSD_TOL * scale,
                     f"covariance {k} has eigenvalue {w.min():.3e} below tolerance")

    @classmethod
    def sanitize(cls, mats, p_max_w=None):
        """Symmetrize and clamp tiny negative eigenvalues, then validate.

        Eigenvalues in [-PSD_TOL, 0) scaled by the matrix magnitude are set to
        zero; anything more negative raises. With ``p_max_w`` given, traces
        above the budget (beyond TRACE_TOL slack) raise as well.
        """
        fixed = []
        for k, m in enumerate(mats):
            s = hermitian_part(np.asarray(m, dtype=complex))
            w, v = np.linalg.eigh(s)
            scale = max(1.0, float(np.abs(w).max(initial=0.0)))
            if w.min(initial=0.0) < -PSD_TOL * scale:
                raise ValueError(
                    f"covariance {k}: eigenvalue {w.min():.3e} below -{PSD_TOL:g} tolerance")
            w = np.clip(w, 0.0, None)
            s = (v * w) @ v.conj().T
            s = hermitian_part(s)
            if p_max_w is not None:
                tr = float(np.real(np.trace(s)))
                if tr > p_max_w + TRACE_TOL * max(1.0, p_max_w):
                    raise ValueError(
                        f"covariance {k}: trace {tr:.6g} exceeds budget {p_max_w:.6g}")
            fixed.append(s)
        return cls(tuple(fixed))

    def trace(self, k):
        return float(np.real(np.trace(self.covariances[k])))


@dataclass(frozen=True)
class OffloadDecision:
    """Per-user offloading ratios and local CPU frequencies."""

    ratios: tuple
    frequencies_hz: tuple

    def __post_init__(self):
        ratios = tuple(float(b) for b in self.ratios)
        freqs = tuple(float(f) for f in self.frequencies_hz)
        object.__setattr__(self, "ratios", ratios)
        object.__setattr__(self, "frequencies_hz", freqs)
        _require(len(ratios) == len(freqs), "ratios and frequencies must align")
        for k, b in enumerate(ratios):
            _require(0.0 <= b <= 1.0, f"user {k}: ratio {b} outside [0, 1]")
        for k, f in enumerate(freqs):
            _require(f >= 0.0, f"user {k}: negative frequency")


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-user energy/latency accounting plus system totals."""

    offload_energy_j: tuple
    local_energy_j: tuple
    offload_time_s: tuple
    local_time_s: tuple
    rate_bps: tuple
    total_energy_j: float

    def __post_init__(self):
        total = sum(self.offload_energy_j) + sum(self.local_energy_j)
        _require(abs(total - self.total_energy_j) <= 1e-9 * max(1.0, abs(total)),
                 "total_energy_j inconsistent with per-user terms")
        for name in ("offload_energy_j", "local_energy_j"):
            for v in getattr(self, name):
                _require(v >= 0.0, f"{name} must be nonnegative")

    @property
    def n_users(self):
        return len(self.offload_energy_j)


def interference_covariance(k, channels, precoders, noise_power_w):
    """Interference-plus-noise covariance seen when decoding user k.

    Sums the (channel-shaped) covariances of every user decoded after k on
    top of the white noise floor. The last user in the decoding order sees
    exactly ``noise_power_w * I``.
    """
    _require(noise_power_w > 0, "noise power must be positive")
    n_rx = channels.n_rx
    q = noise_power_w * np.eye(n_rx, dtype=complex)
    for i in channels.decoded_after(k):
        h = channels.channels[i]
        s = precoders.covariances[i]
        _require(s.shape[0] == channels.n_tx,
                 f"covariance {i}: side {s.shape[0]} != n_tx {channels.n_tx}")
        q = q + h @ s @ h.conj().T
    return hermitian_part(q)


def achievable_rate(k, channels, precoders, params):
    """Achievable uplink rate of user k in bit/s under successive decoding.

    Computed as the log-det increment over the interference floor so that a
    zero covariance yields exactly zero rate.
    """
    q = interference_covariance(k, channels, precoders, params.noise_power_w)
    h = channels.channels[k]
    s = precoders.covariances[k]
    m = q + h @ s @ h.conj().T
    rate = params.bandwidth_hz * (logdet2_psd(m) - logdet2_psd(q))
    return max(0.0, rate)


def evaluate(channels, precoders, decision, tasks, params):
    """Energy and latency accounting for a complete operating point.

    Returns an EnergyBreakdown. Raises OffloadRateZeroError when a user
    offloads a positive fraction over a zero-rate link, FrequencyZeroError
    when local work remains but the CPU frequency is zero.
    """
    n = channels.n_users
    _require(len(tasks) == n and len(decision.ratios) == n, "per-user inputs must align")
    e_off, e_loc, t_off, t_loc, rates = [], [], [], [], []
    for k in range(n):
        beta = decision.ratios[k]
        f = decision.frequencies_hz[k]
        task = tasks[k]
        rate = achievable_rate(k, channels, precoders, params)
        rates.append(rate)
        if beta > 0.0:
            if rate <= 0.0:
                raise OffloadRateZeroError(k)
            time_off = beta * task.data_bits / rate
        else:
            time_off = 0.0
        tr = float(np.real(np.trace(precoders.covariances[k])))
        e_off.append(time_off * tr)
        t_off.append(time_off)
        if beta < 1.0:
            if f <= 0.0:
                raise FrequencyZeroError(k)
            time_loc = (1.0 - beta) * task.total_cycles / f
        else:
            time_loc = 0.0
        e_loc.append(params.eta * (1.0 - beta) * task.total_cycles * f * f)
        t_loc.append(time_loc)
    total = sum(e_off) + sum(e_loc)
    return EnergyBreakdown(
        offload_energy_j=tuple(e_off),
        local_energy_j=tuple(e_loc),
        offload_time_s=tuple(t_off),
        local_time_s=tuple(t_loc),
        rate_bps=tuple(rates),
        total_energy_j=total,
    )


@dataclass(frozen=True)
class ConstraintCheck:
    """Outcome of one named constraint: slack >= 0 means satisfied exactly."""

    name: str
    ok: bool
    slack: float


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-user constraint audit; ``entries[k]`` is a tuple of checks."""

    entries: tuple
    tol: float

    @property
    def all_ok(self):
        return all(c.ok for checks in self.entries for c in checks)

    def failures(self):
        return [(k, c) for k, checks in enumerate(self.entries) for c in checks if not c.ok]


def check_constraints(channels, precoders, decision, tasks, params, tol=1e-9):
    """Audit frequency cap, ratio bounds, power budget and both deadlines.

    Never raises on violations: each constraint is reported with its signed
    slack (limit minus value), passing when slack >= -tol * scale of the
    corresponding limit. Infinite times (zero rate or frequency with work
    remaining) report as failed with -inf slack.
    """
    entries = []
    for k in range(channels.n_users):
        beta = decision.ratios[k]
        f = decision.frequencies_hz[k]
        task = tasks[k]
        rate = achievable_rate(k, channels, precoders, params)
        tr = float(np.real(np.trace(precoders.covariances[k])))
        if beta > 0.0:
            time_off = beta * task.data_bits / rate if rate > 0.0 else math.inf
        else:
            time_off = 0.0
        if beta < 1.0:
            time_loc = (1.0 - beta) * task.total_cycles / f if f > 0.0 else math.inf
        else:
            time_loc = 0.0
        checks = (
            ConstraintCheck("frequency", f <= params.f_max_hz + tol * params.f_max_hz,
                            params.f_max_hz - f),
            ConstraintCheck("ratio", -tol <= beta <= 1.0 + tol, min(beta, 1.0 - beta)),
            ConstraintCheck("power", tr <= params.p_max_w + tol * params.p_max_w,
                            params.p_max_w - tr),
            ConstraintCheck("offload_time", time_off <= task.deadline_s + tol * task.deadline_s,
                            task.deadline_s - time_off),
            ConstraintCheck("local_time", time_loc <= task.deadline_s + tol * task.deadline_s,
                            task.deadline_s - time_loc),
        )
        entries.append(checks)
    return FeasibilityReport(entries=tuple(entries), tol=tol)
