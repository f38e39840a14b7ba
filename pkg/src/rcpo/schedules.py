"""Step-size schedules, timescale checks and projection operators."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProjectionBox",
    "ScheduleFamily",
    "StepSchedule",
    "TimescaleVerdict",
    "Verdict",
    "check_ordering",
    "parse_schedule",
    "project_lambda",
    "project_theta",
    "schedule_value",
    "validate_timescales",
]


class ScheduleFamily(enum.Enum):
    POWER_LAW = "powerlaw"
    CONSTANT = "const"
    CONSTANT_WITH_DECAY = "constdecay"


@dataclass(frozen=True)
class StepSchedule:
    """eta(k) = a / (1 + k)**p, a, or a * kappa**k depending on ``family``."""

    family: ScheduleFamily
    a: float
    p: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", ScheduleFamily(self.family))
        if not (math.isfinite(self.a) and self.a > 0):
            raise ValueError(f"step-size scale must be positive, got {self.a}")
        if self.family is ScheduleFamily.POWER_LAW and not (math.isfinite(self.p) and self.p > 0):
            raise ValueError(f"power-law exponent must be positive, got {self.p}")
        if self.family is ScheduleFamily.CONSTANT_WITH_DECAY and not 0 < self.kappa <= 1:
            raise ValueError(f"decay factor must lie in (0, 1], got {self.kappa}")

    @classmethod
    def power_law(cls, a, p):
        return cls(ScheduleFamily.POWER_LAW, float(a), p=float(p))

    @classmethod
    def constant(cls, a):
        return cls(ScheduleFamily.CONSTANT, float(a))

    @classmethod
    def constant_with_decay(cls, a, kappa):
        return cls(ScheduleFamily.CONSTANT_WITH_DECAY, float(a), kappa=float(kappa))

    def __call__(self, k: int) -> float:
        return schedule_value(self, k)

    def __str__(self):
        if self.family is ScheduleFamily.POWER_LAW:
            return f"powerlaw:{self.a!r},{self.p!r}"
        if self.family is ScheduleFamily.CONSTANT:
            return f"const:{self.a!r}"
        return f"constdecay:{self.a!r},{self.kappa!r}"


def schedule_value(s: StepSchedule, k: int) -> float:
    if k < 0:
        raise ValueError("step index must be non-negative")
    if s.family is ScheduleFamily.POWER_LAW:
        return s.a / (1.0 + k) ** s.p
    if s.family is ScheduleFamily.CONSTANT:
        return s.a
    return s.a * s.kappa ** k


def parse_schedule(text: str) -> StepSchedule:
    """Parse ``powerlaw:a,p``, ``const:a`` or ``constdecay:a,kappa``."""
    name, sep, args = text.strip().partition(":")
    if not sep:
        raise ValueError(f"schedule {text!r} is missing ':'")
    try:
        vals = [float(v) for v in args.split(",")]
    except ValueError as exc:
        raise ValueError(f"schedule {text!r} has non-numeric arguments") from exc
    expected = {"powerlaw": 2, "const": 1, "constdecay": 2}
    if name not in expected:
        raise ValueError(f"unknown schedule family {name!r}")
    if len(vals) != expected[name]:
        raise ValueError(f"schedule {name} takes {expected[name]} argument(s), got {len(vals)}")
    if name == "powerlaw":
        return StepSchedule.power_law(*vals)
    if name == "const":
        return StepSchedule.constant(*vals)
    return StepSchedule.constant_with_decay(*vals)


class Verdict(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class TimescaleVerdict:
    verdict: Verdict
    reason: str

    @property
    def valid(self) -> bool:
        return self.verdict is Verdict.VALID

    @property
    def permitted(self) -> bool:
        return self.verdict is not Verdict.INVALID


def _robbins_monro(p):
    return 0.5 < p <= 1.0


def validate_timescales(slow: StepSchedule, fast: StepSchedule) -> TimescaleVerdict:
    """Check a (slow, fast) pair against the two-timescale step-size conditions.

    Power-law pairs are accepted iff both exponents lie in (0.5, 1] and the
    slow exponent is strictly larger, so that slow(k) / fast(k) -> 0.
    Constant families can never satisfy sum(eta**2) < inf; they are reported
    as heuristic rather than rejected.
    """
    pl = ScheduleFamily.POWER_LAW
    if slow.family is pl and fast.family is pl:
        for role, s in (("slow", slow), ("fast", fast)):
            if not _robbins_monro(s.p):
                why = "sum of squares diverges" if s.p <= 0.5 else "sum of steps converges"
                return TimescaleVerdict(
                    Verdict.INVALID, f"{role} exponent {s.p} outside (0.5, 1]: {why}")
        if slow.p <= fast.p:
            return TimescaleVerdict(
                Verdict.INVALID,
                f"slow exponent {slow.p} must exceed fast exponent {fast.p} "
                "for the step-size ratio to vanish")
        return TimescaleVerdict(
            Verdict.VALID,
            f"ratio (1+k)^-{slow.p - fast.p:g} -> 0, both exponents in (0.5, 1]")
    for role, s in (("slow", slow), ("fast", fast)):
        if s.family is pl and not _robbins_monro(s.p):
            return TimescaleVerdict(Verdict.INVALID, f"{role} exponent {s.p} outside (0.5, 1]")
    return TimescaleVerdict(
        Verdict.HEURISTIC,
        "heuristic: violates the multi-timescale step-size conditions "
        "(squared steps not summable); permitted for constant-rate runs")


_ORDER_PROBE = (1, 10, 100, 10_000, 1_000_000)


def check_ordering(*schedules: StepSchedule) -> str | None:
    """Return a diagnostic if ``eta_1(k) < eta_2(k) < ...`` fails, else None.

    The ordering is probed at a fixed set of step indices.
    """
    for k in _ORDER_PROBE:
        vals = [s(k) for s in schedules]
        for i in range(len(vals) - 1):
            if not vals[i] < vals[i + 1]:
                return (f"timescale ordering violated at k={k}: "
                        f"eta_{i + 1}={vals[i]:g} >= eta_{i + 2}={vals[i + 1]:g}")
    return None


def project_lambda(lam: float, lam_max: float = math.inf) -> float:
    if lam_max < 0:
        raise ValueError("lambda_max must be non-negative")
    return min(max(lam, 0.0), lam_max)


@dataclass(frozen=True, eq=False)
class ProjectionBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(lo > hi):
            raise ValueError("projection box needs lower <= upper")
        lo, hi = lo.copy(), hi.copy()
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, shape, bound):
        return cls(np.full(shape, -bound), np.full(shape, bound))

    @classmethod
    def unbounded(cls, shape):
        return cls.uniform(shape, np.inf)


def project_theta(theta, box: ProjectionBox) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != box.lower.shape:
        raise ValueError(f"theta shape {theta.shape} does not match box {box.lower.shape}")
    return np.clip(theta, box.lower, box.upper)
