"""Exception types shared across the solver stack.

Every error carries a short kebab-case ``code`` so harness code and the CLI
can report failures uniformly without string-matching exception messages.
"""

from __future__ import annotations

__all__ = [
    "MecoptError",
    "ConfigError",
    "OffloadRateZeroError",
    "FrequencyZeroError",
    "FrequencyCapExceededError",
    "InstanceInfeasibleError",
    "RateConstraintInfeasibleError",
    "SurrogateInfeasibleError",
    "DeadlineUnreachableError",
    "NumericalFailureError",
]


class MecoptError(Exception):
    """Base class for all library errors."""

    code = "error"


class ConfigError(MecoptError):
    """Invalid or missing experiment configuration field."""

    code = "config-error"

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class OffloadRateZeroError(MecoptError):
    """A user offloads a positive fraction but has zero uplink rate."""

    code = "offload-rate-zero"

    def __init__(self, user):
        self.user = user
        super().__init__(f"user {user}: positive offload fraction with zero rate")


class FrequencyZeroError(MecoptError):
    """A user computes locally but has zero CPU frequency."""

    code = "frequency-zero"

    def __init__(self, user):
        self.user = user
        super().__init__(f"user {user}: local work remains but CPU frequency is zero")


class FrequencyCapExceededError(MecoptError):
    """Deadline-tight CPU frequency exceeds the hardware cap.

    Carries the minimum offloading ratio that would restore feasibility.
    """

    code = "frequency-cap-exceeded"

    def __init__(self, required_hz, f_max_hz, min_feasible_ratio):
        self.required_hz = required_hz
        self.f_max_hz = f_max_hz
        self.min_feasible_ratio = min_feasible_ratio
        super().__init__(
            f"required CPU frequency {required_hz:.6g} Hz exceeds cap {f_max_hz:.6g} Hz; "
            f"offloading ratio must be at least {min_feasible_ratio:.6g}"
        )


class InstanceInfeasibleError(MecoptError):
    """The per-user ratio interval is empty (floor above cap)."""

    code = "instance-infeasible"

    def __init__(self, message, user=None):
        self.user = user
        super().__init__(message)


class RateConstraintInfeasibleError(MecoptError):
    """No power allocation meets the rate floor within the power budget."""

    code = "rate-constraint-infeasible"

    def __init__(self, message, user=None):
        self.user = user
        super().__init__(message)


class SurrogateInfeasibleError(MecoptError):
    """The convex surrogate has no strictly feasible point."""

    code = "surrogate-infeasible"

    def __init__(self, message, user=None):
        self.user = user
        super().__init__(message)


class DeadlineUnreachableError(MecoptError):
    """No precoder meets a user's offload deadline under the power budget."""

    code = "deadline-unreachable"

    def __init__(self, user, message=None):
        self.user = user
        super().__init__(message or f"user {user}: offload deadline unreachable at full power")


class NumericalFailureError(MecoptError):
    """An inner solver failed to produce a usable iterate."""

    code = "numerical-failure"

    def __init__(self, message, iterate=None):
        self.iterate = iterate
        super().__init__(message)
