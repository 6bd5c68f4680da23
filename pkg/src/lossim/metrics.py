"""Run statistics: drop accounting, hop depth, optimisation trajectories.

CSV layouts (schema version 1, rows in deterministic order):

``report.csv``
    job_key, iteration, node, limit, train_time, t_complete, t_period,
    relative_residual, met_period, hops
``hops.csv``
    hops, count, fraction
``drops.csv``
    job_key, triggers, executions, <one column per drop reason>, drop_rate
``iterations.csv``
    iteration, jobs, mean_limit, mean_train_time, mean_relative_residual
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1
DROP_REASONS = ("hop_limit", "cycle", "previous_still_running", "no_feasible_node", "node_left")


@dataclass
class JobCounts:
    triggers: int = 0
    executions: int = 0
    drops: dict[str, int] = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    def merged(self, other: "JobCounts") -> "JobCounts":
        drops = dict(self.drops)
        for k, v in other.drops.items():
            drops[k] = drops.get(k, 0) + v
        return JobCounts(self.triggers + other.triggers, self.executions + other.executions, drops)


@dataclass(frozen=True)
class IterationRow:
    job_key: str
    iteration: int
    node: str
    limit: int
    train_time: float
    t_complete: float
    t_period: float
    relative_residual: float
    met_period: bool
    hops: int


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    stream_count: int
    max_hops: int
    jobs: dict[str, JobCounts] = field(default_factory=dict)
    hops: dict[int, int] = field(default_factory=dict)
    iterations: list[IterationRow] = field(default_factory=list)

    @property
    def triggers(self) -> int:
        return sum(c.triggers for c in self.jobs.values())

    @property
    def executions(self) -> int:
        return sum(c.executions for c in self.jobs.values())

    @property
    def dropped(self) -> int:
        return sum(c.dropped for c in self.jobs.values())

    def drops_by_reason(self) -> dict[str, int]:
        out = {r: 0 for r in DROP_REASONS}
        for c in self.jobs.values():
            for k, v in c.drops.items():
                out[k] = out.get(k, 0) + v
        return out

    @property
    def drop_rate(self) -> float:
        return self.dropped / self.triggers if self.triggers else 0.0

    def to_text(self) -> str:
        """Fixed-order JSON summary; byte-identical for identical runs."""
        body = {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "seed": self.seed,
            "stream_count": self.stream_count,
            "max_hops": self.max_hops,
            "triggers": self.triggers,
            "executions": self.executions,
            "drops": self.drops_by_reason(),
            "drop_rate": round(self.drop_rate, 6),
            "hops": {str(k): v for k, v in sorted(self.hops.items())},
            "hop_distribution": {str(k): round(v, 6) for k, v in hop_distribution(self).items()},
            "jobs": {
                k: {"triggers": c.triggers, "executions": c.executions, "drops": dict(sorted(c.drops.items()))}
                for k, c in sorted(self.jobs.items())
            },
        }
        return json.dumps(body, indent=2) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        """Inverse of ``to_text`` for the count fields (iteration rows live in report.csv)."""
        body = json.loads(text)
        if body.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {body.get('schema_version')!r}")
        return cls(
            scenario=body["scenario"],
            seed=int(body["seed"]),
            stream_count=int(body["stream_count"]),
            max_hops=int(body["max_hops"]),
            jobs={
                k: JobCounts(int(v["triggers"]), int(v["executions"]), {r: int(n) for r, n in v["drops"].items()})
                for k, v in body["jobs"].items()
            },
            hops={int(k): int(v) for k, v in body["hops"].items()},
        )


def merge_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Fold several runs into one report (counts add, rows concatenate)."""
    if not reports:
        raise ValueError("nothing to merge")
    first = reports[0]
    jobs: dict[str, JobCounts] = {}
    hops: dict[int, int] = {}
    rows: list[IterationRow] = []
    for r in reports:
        for k, c in r.jobs.items():
            jobs[k] = jobs[k].merged(c) if k in jobs else JobCounts(c.triggers, c.executions, dict(c.drops))
        for h, n in r.hops.items():
            hops[h] = hops.get(h, 0) + n
        rows.extend(r.iterations)
    return MetricsReport(
        scenario=first.scenario,
        seed=first.seed,
        stream_count=first.stream_count,
        max_hops=first.max_hops,
        jobs=dict(sorted(jobs.items())),
        hops=dict(sorted(hops.items())),
        iterations=rows,
    )


def hop_distribution(report: MetricsReport) -> dict[int, float]:
    """Fraction of executed jobs per forwarding depth; 0 means ran at the origin."""
    total = sum(report.hops.values())
    if total == 0:
        return {}
    return {h: n / total for h, n in sorted(report.hops.items()) if n > 0}


def modal_hops(report: MetricsReport) -> int | None:
    dist = hop_distribution(report)
    if not dist:
        return None
    return max(sorted(dist), key=lambda h: dist[h])


@dataclass(frozen=True)
class DropSummary:
    stream_count: int
    runs: int
    mean: float
    min: float
    q1: float
    median: float
    q3: float
    max: float


def drop_rate_summary(groups: Mapping[int, Sequence[MetricsReport]]) -> dict[int, DropSummary]:
    """Per stream-count box-plot statistics of run drop rates."""
    out = {}
    for streams in sorted(groups):
        rates = np.array([r.drop_rate for r in groups[streams]], dtype=float)
        if rates.size == 0:
            raise ValueError(f"no runs for {streams} streams")
        q1, med, q3 = np.percentile(rates, [25, 50, 75])
        out[streams] = DropSummary(
            stream_count=streams,
            runs=int(rates.size),
            mean=float(rates.mean()),
            min=float(rates.min()),
            q1=float(q1),
            median=float(med),
            q3=float(q3),
            max=float(rates.max()),
        )
    return out


def improvement_over_insitu(
    los: Mapping[int, Sequence[MetricsReport]],
    baseline: Mapping[int, Sequence[MetricsReport]],
) -> dict[int, float]:
    """Baseline minus LOS mean drop rate, in percentage points, per stream count."""
    if sorted(los) != sorted(baseline):
        raise ValueError("stream counts differ between LOS and baseline")
    out = {}
    for streams in sorted(los):
        a, b = los[streams], baseline[streams]
        if sorted((r.scenario, r.seed) for r in a) != sorted((r.scenario, r.seed) for r in b):
            raise ValueError(f"{streams} streams: LOS and baseline runs use different scenarios or seeds")
        la = float(np.mean([r.drop_rate for r in a]))
        lb = float(np.mean([r.drop_rate for r in b]))
        out[streams] = 100.0 * (lb - la)
    return out


def iteration_means(report: MetricsReport) -> list[tuple[int, int, float, float, float]]:
    """Per-iteration means across jobs: ``(iteration, jobs, limit, train_time, residual)``."""
    acc: dict[int, list[IterationRow]] = {}
    for row in report.iterations:
        acc.setdefault(row.iteration, []).append(row)
    out = []
    for it in sorted(acc):
        rows = acc[it]
        out.append(
            (
                it,
                len(rows),
                float(np.mean([r.limit for r in rows])),
                float(np.mean([r.train_time for r in rows])),
                float(np.mean([r.relative_residual for r in rows])),
            )
        )
    return out


# -- CSV export ---------------------------------------------------------


def _csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def report_csv(report: MetricsReport) -> str:
    fields = list(IterationRow.__dataclass_fields__)
    rows = sorted(report.iterations, key=lambda r: (r.job_key, r.iteration))
    return _csv(fields, ([asdict(r)[f] for f in fields] for r in rows))


def hops_csv(report: MetricsReport) -> str:
    dist = hop_distribution(report)
    return _csv(
        ["hops", "count", "fraction"],
        ([h, n, _fmt(dist.get(h, 0.0))] for h, n in sorted(report.hops.items())),
    )


def drops_csv(report: MetricsReport) -> str:
    header = ["job_key", "triggers", "executions", *DROP_REASONS, "drop_rate"]
    rows = []
    for k, c in sorted(report.jobs.items()):
        rate = c.dropped / c.triggers if c.triggers else 0.0
        rows.append([k, c.triggers, c.executions, *(c.drops.get(r, 0) for r in DROP_REASONS), _fmt(rate)])
    return _csv(header, rows)


def iterations_csv(report: MetricsReport) -> str:
    return _csv(
        ["iteration", "jobs", "mean_limit", "mean_train_time", "mean_relative_residual"],
        ([it, n, _fmt(l), _fmt(t), _fmt(r)] for it, n, l, t, r in iteration_means(report)),
    )


def sweep_drops_csv(summary: Mapping[int, DropSummary]) -> str:
    return _csv(
        ["streams", "runs", "mean", "min", "q1", "median", "q3", "max"],
        (
            [s.stream_count, s.runs, _fmt(s.mean), _fmt(s.min), _fmt(s.q1), _fmt(s.median), _fmt(s.q3), _fmt(s.max)]
            for s in summary.values()
        ),
    )


def sweep_hops_csv(groups: Mapping[int, Sequence[MetricsReport]], max_hops: int) -> str:
    rows = []
    for streams in sorted(groups):
        dist = hop_distribution(merge_reports(groups[streams]))
        rows.append([streams, *(_fmt(dist.get(h, 0.0)) for h in range(max_hops + 1))])
    return _csv(["streams", *(f"hops_{h}" for h in range(max_hops + 1))], rows)
