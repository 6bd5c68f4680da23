"""Vertical scaling of training-job CPU limits.

The first execution of a job gets 85% of whatever CPU is free on the
executing node. Every finished execution then moves the limit by 10%:
down when the period was met, up when it was missed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

from .models import JobKey

INITIAL_SHARE = 0.85
SHRINK = 0.9
GROW = 1.1
MIN_LIMIT = 10  # millicores


def residual(t_complete: float, t_period: float) -> tuple[float, float]:
    """Absolute and period-normalised deviation of completion time from the period."""
    if t_period <= 0:
        raise ValueError("t_period must be > 0")
    absolute = abs(t_complete - t_period)
    return absolute, absolute / t_period


def initial_limit(cpu_available: float, min_limit: int = MIN_LIMIT) -> int:
    if cpu_available <= 0:
        raise ValueError("cpu_available must be > 0")
    return max(min_limit, math.floor(INITIAL_SHARE * cpu_available))


def clamp_limit(limit: float, capacity: int, min_limit: int = MIN_LIMIT) -> int:
    return int(min(max(round(limit), min_limit), capacity))


@dataclass(frozen=True)
class LimitState:
    job_key: JobKey
    current_limit: int
    iteration: int = 0
    last_met_period: bool | None = None
    residual_history: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.current_limit <= 0:
            raise ValueError("current_limit must be > 0")

    def observe(
        self,
        limit_used: int,
        t_complete: float,
        t_period: float,
        capacity: int,
        min_limit: int = MIN_LIMIT,
    ) -> "LimitState":
        """Fold one finished execution into the state and return the successor.

        Adaptation starts from the limit the execution actually ran with,
        which can be below ``current_limit`` when the executing node had
        less CPU free.
        """
        met = t_complete <= t_period
        _, rel = residual(t_complete, t_period)
        it = self.iteration + 1
        base = replace(self, current_limit=max(1, limit_used))
        return replace(
            self,
            current_limit=adapt_limit(base, met, capacity, min_limit),
            iteration=it,
            last_met_period=met,
            residual_history=self.residual_history + ((it, rel),),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_key": str(self.job_key),
            "current_limit": self.current_limit,
            "iteration": self.iteration,
            "last_met_period": self.last_met_period,
            "residual_history": [list(x) for x in self.residual_history],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LimitState":
        return cls(
            job_key=JobKey.parse(d["job_key"]),
            current_limit=int(d["current_limit"]),
            iteration=int(d["iteration"]),
            last_met_period=d["last_met_period"],
            residual_history=tuple((int(i), float(r)) for i, r in d["residual_history"]),
        )


def adapt_limit(state: LimitState, met_period: bool, capacity: int, min_limit: int = MIN_LIMIT) -> int:
    factor = SHRINK if met_period else GROW
    return clamp_limit(state.current_limit * factor, capacity, min_limit)
