"""Availability and job-runtime models.

The runtime curve is ``t_job(R) = a * (R + b) ** -c + d`` with ``R`` the CPU
limit in millicores. Completion time adds network transfer along the
forwarding path plus container start/stop overheads.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Any, Iterable, Sequence

import numpy as np

from .topology import NodeId, NodeSpec

if TYPE_CHECKING:
    from .optimizer import LimitState

MIN_FIT_RECORDS = 3
HISTORY_CAP = 64
DEFAULT_K_SIGMA = 2.0

# log-space search box for the shift and exponent of the runtime curve
_LOG_B_RANGE = (math.log(1e-2), math.log(1e5))
_LOG_C_RANGE = (math.log(0.05), 0.0)  # c <= 1: speedup at most linear in the limit


class NoFit(Exception):
    """History too short or degenerate to fit a runtime curve."""


@dataclass(frozen=True, order=True)
class JobKey:
    stream_id: str
    model_id: str

    def __str__(self) -> str:
        return f"{self.stream_id}/{self.model_id}"

    @classmethod
    def parse(cls, text: str) -> "JobKey":
        stream, _, model = text.partition("/")
        return cls(stream, model)


@dataclass(frozen=True)
class Overheads:
    t_cstart: float = 0.0
    t_cstop: float = 0.0

    def __post_init__(self) -> None:
        if self.t_cstart < 0 or self.t_cstop < 0:
            raise ValueError("container overheads must be >= 0")

    @property
    def total(self) -> float:
        return self.t_cstart + self.t_cstop


@dataclass(frozen=True)
class AvailabilityModel:
    """Last scraped resource snapshot of one node plus its direct-link metrics."""

    node: NodeId
    scraped_at: float
    cpu_capacity: int
    mem_capacity: int
    cpu_available: int
    mem_available: float
    neighbor_metrics: tuple[tuple[NodeId, float, float], ...] = ()

    @property
    def cpu_utilization(self) -> float:
        return 1.0 - self.cpu_available / self.cpu_capacity

    def link_to(self, neighbor: NodeId) -> tuple[float, float]:
        for nid, lat, bw in self.neighbor_metrics:
            if nid == neighbor:
                return lat, bw
        raise KeyError(neighbor)

    def to_dict(self) -> dict[str, Any]:
        return {
            "node": self.node,
            "scraped_at": self.scraped_at,
            "cpu_capacity": self.cpu_capacity,
            "mem_capacity": self.mem_capacity,
            "cpu_available": self.cpu_available,
            "mem_available": self.mem_available,
            "neighbor_metrics": [list(m) for m in self.neighbor_metrics],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AvailabilityModel":
        return cls(
            node=d["node"],
            scraped_at=float(d["scraped_at"]),
            cpu_capacity=int(d["cpu_capacity"]),
            mem_capacity=int(d["mem_capacity"]),
            cpu_available=int(d["cpu_available"]),
            mem_available=float(d["mem_available"]),
            neighbor_metrics=tuple((str(n), float(l), float(b)) for n, l, b in d["neighbor_metrics"]),
        )


@dataclass(frozen=True)
class TrainingRecord:
    job_key: JobKey
    node: NodeId
    cpu_limit: int
    duration: float  # t_job, training portion only
    cpu_utilization: float
    mem_peak: float
    net_bytes: float
    met_period: bool
    finished_at: float

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if not 0.0 <= self.cpu_utilization <= 1.0:
            raise ValueError("cpu_utilization must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "job_key": str(self.job_key),
            "node": self.node,
            "cpu_limit": self.cpu_limit,
            "duration": self.duration,
            "cpu_utilization": self.cpu_utilization,
            "mem_peak": self.mem_peak,
            "net_bytes": self.net_bytes,
            "met_period": self.met_period,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainingRecord":
        return cls(
            job_key=JobKey.parse(d["job_key"]),
            node=d["node"],
            cpu_limit=int(d["cpu_limit"]),
            duration=float(d["duration"]),
            cpu_utilization=float(d["cpu_utilization"]),
            mem_peak=float(d["mem_peak"]),
            net_bytes=float(d["net_bytes"]),
            met_period=bool(d["met_period"]),
            finished_at=float(d["finished_at"]),
        )


@dataclass(frozen=True)
class RuntimeFit:
    a: float
    b: float
    c: float
    d: float
    rmse: float = 0.0

    def predict(self, cpu_limit: float) -> float:
        return predict_t_job(self, cpu_limit)

    def to_dict(self) -> dict[str, float]:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d, "rmse": self.rmse}


@dataclass(frozen=True)
class RuntimeModel:
    """Per-(stream, model) training history and the curve fitted to it.

    Instances are never mutated in place; ``updated`` returns a new model so
    the same object can be shared by gossip messages safely.
    """

    job_key: JobKey
    t_period: float
    history: tuple[TrainingRecord, ...] = ()
    fit: RuntimeFit | None = None
    mem_estimate: float = 0.0
    net_estimate: float = 0.0
    limit_state: "LimitState | None" = None
    version: int = 0

    def updated(
        self,
        record: TrainingRecord,
        limit_state: "LimitState | None" = None,
        *,
        history_cap: int = HISTORY_CAP,
        min_fit_records: int = MIN_FIT_RECORDS,
        k_sigma: float = DEFAULT_K_SIGMA,
    ) -> "RuntimeModel":
        history = (self.history + (record,))[-history_cap:]
        try:
            fit = fit_runtime_model(history, min_fit_records=min_fit_records)
        except NoFit:
            fit = None
        mem, net = estimate_worst_case(history, k_sigma)
        return replace(
            self,
            history=history,
            fit=fit,
            mem_estimate=mem,
            net_estimate=net,
            limit_state=limit_state if limit_state is not None else self.limit_state,
            version=self.version + 1,
        )

    def to_dict(self) -> dict[str, Any]:
        ls = self.limit_state
        return {
            "job_key": str(self.job_key),
            "t_period": self.t_period,
            "version": self.version,
            "fit": self.fit.to_dict() if self.fit else None,
            "mem_estimate": self.mem_estimate,
            "net_estimate": self.net_estimate,
            "limit_state": ls.to_dict() if ls else None,
            "history": [r.to_dict() for r in self.history],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RuntimeModel":
        from .optimizer import LimitState

        fit = d.get("fit")
        ls = d.get("limit_state")
        return cls(
            job_key=JobKey.parse(d["job_key"]),
            t_period=float(d["t_period"]),
            history=tuple(TrainingRecord.from_dict(r) for r in d.get("history", [])),
            fit=RuntimeFit(**fit) if fit else None,
            mem_estimate=float(d.get("mem_estimate", 0.0)),
            net_estimate=float(d.get("net_estimate", 0.0)),
            limit_state=LimitState.from_dict(ls) if ls else None,
            version=int(d.get("version", 0)),
        )


# -- runtime curve ------------------------------------------------------


def _solve_linear(x: np.ndarray, t: np.ndarray) -> tuple[float, float, float]:
    """Least squares for ``t ~ a*x + d`` with ``a >= 0`` and ``d >= 0``.

    Returns ``(a, d, sse)``.
    """
    xm, tm = x.mean(), t.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    a = float(dx @ (t - tm)) / sxx if sxx > 0 else 0.0
    d = tm - a * xm
    if a < 0:
        a, d = 0.0, tm
    if d < 0:
        d = 0.0
        a = max(0.0, float(x @ t) / float(x @ x))
    r = a * x + d - t
    return a, float(d), float(r @ r)


def _profile(logb: float, logc: float, r: np.ndarray, t: np.ndarray):
    x = (r + math.exp(logb)) ** (-math.exp(logc))
    return _solve_linear(x, t)


def _grid_sse(lb: np.ndarray, lc: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Vectorised ``_profile`` SSE over the outer product of ``lb`` and ``lc``."""
    b = np.exp(lb)[:, None, None]
    c = np.exp(lc)[None, :, None]
    x = (r[None, None, :] + b) ** (-c)
    xm = x.mean(axis=2, keepdims=True)
    tm = t.mean()
    dx = x - xm
    sxx = (dx * dx).sum(axis=2)
    a = np.where(sxx > 0, (dx * (t - tm)).sum(axis=2) / np.where(sxx > 0, sxx, 1.0), 0.0)
    d = tm - a * xm[..., 0]
    neg_a = a < 0
    a = np.where(neg_a, 0.0, a)
    d = np.where(neg_a, tm, d)
    neg_d = d < 0
    a_d0 = np.maximum(0.0, (x * t).sum(axis=2) / (x * x).sum(axis=2))
    a = np.where(neg_d, a_d0, a)
    d = np.where(neg_d, 0.0, d)
    res = a[..., None] * x + d[..., None] - t
    return (res * res).sum(axis=2)


def fit_runtime_model(
    history: Sequence[TrainingRecord] | Iterable[tuple[float, float]],
    *,
    min_fit_records: int = MIN_FIT_RECORDS,
    grid: int = 24,
    tol: float = 1e-7,
    max_rounds: int = 400,
) -> RuntimeFit:
    """Fit the shifted power-law runtime curve by least squares.

    ``history`` is either training records or plain ``(cpu_limit, duration)``
    pairs. The amplitude and offset enter linearly, so they are solved in
    closed form for every candidate shift/exponent; the shift/exponent pair
    is located on a coarse log-space grid and then polished by successively
    finer local grids.

    Raises:
        NoFit: fewer than ``min_fit_records`` points or fewer than two
            distinct limits.
    """
    pts = [
        (float(h.cpu_limit), float(h.duration)) if isinstance(h, TrainingRecord) else (float(h[0]), float(h[1]))
        for h in history
    ]
    if len(pts) < min_fit_records:
        raise NoFit(f"need >= {min_fit_records} records, have {len(pts)}")
    if len({p[0] for p in pts}) < 2:
        raise NoFit("need at least two distinct cpu limits")
    r = np.array([p[0] for p in pts])
    t = np.array([p[1] for p in pts])

    lb = np.linspace(*_LOG_B_RANGE, grid)
    lc = np.linspace(*_LOG_C_RANGE, grid)
    sse_grid = _grid_sse(lb, lc, r, t)
    i, j = np.unravel_index(int(np.argmin(sse_grid)), sse_grid.shape)
    sse, u, v = float(sse_grid[i, j]), float(lb[i]), float(lc[j])
    # local refinement: a small grid around the incumbent, recentred while it
    # moves and shrunk once the incumbent holds the centre
    step = [float(lb[1] - lb[0]), float(lc[1] - lc[0])]
    offsets = np.linspace(-1.0, 1.0, 9)
    for _ in range(max_rounds):
        if max(step) <= tol:
            break
        lu = np.clip(u + step[0] * offsets, *_LOG_B_RANGE)
        lv = np.clip(v + step[1] * offsets, *_LOG_C_RANGE)
        vals = _grid_sse(lu, lv, r, t)
        i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        if vals[i, j] < sse:
            sse, u, v = float(vals[i, j]), float(lu[i]), float(lv[j])
            if (i, j) == (4, 4):
                step = [x / 3 for x in step]
        else:
            step = [x / 3 for x in step]
    a, d, sse = _profile(u, v, r, t)
    return RuntimeFit(a=a, b=math.exp(u), c=math.exp(v), d=d, rmse=math.sqrt(sse / len(t)))


def predict_t_job(fit: RuntimeFit, cpu_limit: float) -> float:
    if cpu_limit <= 0:
        raise ValueError("cpu limit must be > 0")
    return fit.a * (cpu_limit + fit.b) ** (-fit.c) + fit.d


def send_time(payload_bytes: float, path: Sequence[tuple[float, float]]) -> float:
    """Transfer time over ``path`` given as ``(latency_ms, bandwidth_bytes_per_s)`` links."""
    total = 0.0
    for latency_ms, bandwidth in path:
        if bandwidth <= 0:
            raise ValueError("link bandwidth must be > 0")
        total += payload_bytes / bandwidth + latency_ms / 1000.0
    return total


def predict_t_complete(
    fit: RuntimeFit,
    cpu_limit: float,
    payload_bytes: float,
    path: Sequence[tuple[float, float]],
    overheads: Overheads,
) -> float:
    # empty path means local execution, nothing is sent
    return predict_t_job(fit, cpu_limit) + send_time(payload_bytes, path) + overheads.t_cstart + overheads.t_cstop


def estimate_worst_case(history: Sequence[TrainingRecord], k_sigma: float = DEFAULT_K_SIGMA) -> tuple[float, float]:
    """Gaussian worst case ``mean + k*stddev`` of peak memory and network bytes."""
    if not history:
        return 0.0, 0.0

    def upper(values: list[float]) -> float:
        mean = statistics.fmean(values)
        sd = statistics.stdev(values) if len(values) > 1 else 0.0
        return mean + k_sigma * sd

    return upper([h.mem_peak for h in history]), upper([h.net_bytes for h in history])


def scrape_availability(
    node: NodeId,
    spec: NodeSpec,
    reservations: Iterable[tuple[float, float]],
    neighbor_metrics: Iterable[tuple[NodeId, float, float]],
    time: float,
) -> AvailabilityModel:
    """Snapshot of a node: capacity minus every ``(cpu, mem)`` reservation on it."""
    cpu_used = 0.0
    mem_used = 0.0
    for cpu, mem in reservations:
        cpu_used += cpu
        mem_used += mem
    return AvailabilityModel(
        node=node,
        scraped_at=time,
        cpu_capacity=spec.cpu_capacity,
        mem_capacity=spec.mem_capacity,
        cpu_available=int(max(0, spec.cpu_capacity - round(cpu_used))),
        mem_available=max(0.0, spec.mem_capacity - mem_used),
        neighbor_metrics=tuple(neighbor_metrics),
    )
