"""Annealing coefficient schedules.

Steps are the optimizer-step counter and start at 1; ``beta_at(spec, t)``
is evaluated before step ``t``'s forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["ScheduleSpec", "beta_at", "make_fraction_schedule", "beta_trajectory"]

KINDS = ("linear", "constant")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "linear"
    t_start: int = 0
    t_end: int = 0
    total_steps: int = 1
    constant_value: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"schedule kind must be one of {KINDS}, got {self.kind!r}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.t_start <= self.t_end <= self.total_steps:
            raise ValueError(
                f"need 0 <= t_start <= t_end <= total_steps, got "
                f"t_start={self.t_start}, t_end={self.t_end}, total_steps={self.total_steps}"
            )
        if not 0.0 <= self.constant_value <= 1.0:
            raise ValueError(f"constant_value must lie in [0, 1], got {self.constant_value}")

    @classmethod
    def constant(cls, value: float, total_steps: int) -> "ScheduleSpec":
        return cls(kind="constant", t_start=0, t_end=0, total_steps=total_steps, constant_value=value)


def beta_at(spec: ScheduleSpec, t: int) -> float:
    if not 0 <= t <= spec.total_steps:
        raise ValueError(f"step {t} outside [0, {spec.total_steps}]")
    if spec.kind == "constant":
        return float(spec.constant_value)
    if spec.t_end == spec.t_start:
        return 1.0 if t < spec.t_start else 0.0
    return max(0.0, 1.0 - max(0, t - spec.t_start) / (spec.t_end - spec.t_start))


def beta_trajectory(spec: ScheduleSpec) -> list[float]:
    return [beta_at(spec, t) for t in range(1, spec.total_steps + 1)]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_fraction_schedule(total_steps: int, start_frac: float = 0.0, end_frac: float = 0.3) -> ScheduleSpec:
    """Linear decay between ``start_frac * T`` and ``end_frac * T``."""
    if not 0.0 <= start_frac <= end_frac <= 1.0:
        raise ValueError(
            f"need 0 <= start_frac <= end_frac <= 1, got start_frac={start_frac}, end_frac={end_frac}"
        )
    t_start = _round_half_up(start_frac * total_steps)
    t_end = _round_half_up(end_frac * total_steps)
    if t_end == t_start and end_frac > start_frac:
        t_end = t_start + 1
    t_end = min(t_end, total_steps)
    t_start = min(t_start, t_end)
    return ScheduleSpec(kind="linear", t_start=t_start, t_end=t_end, total_steps=total_steps)
