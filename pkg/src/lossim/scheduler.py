"""Per-node placement decision for a triggered training job.

A node runs the job itself when its own resources suffice. Otherwise it
forwards the job to the best-ranked direct neighbour, preferring neighbours
whose gossiped availability says the job fits, and falling back to the best
infeasible one so the search continues from there. A token of visited nodes
and a hop budget bound every forwarding chain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Sequence, Union

import numpy as np

from .models import AvailabilityModel, JobKey, Overheads, RuntimeModel, predict_t_complete
from .optimizer import MIN_LIMIT, initial_limit
from .topology import NodeId

COLDSTART_UTILIZATION = 0.85
DEFAULT_MAX_HOPS = 4


class DropReason(str, Enum):
    HOP_LIMIT = "hop_limit"
    CYCLE = "cycle"
    PREVIOUS_STILL_RUNNING = "previous_still_running"
    NO_FEASIBLE_NODE = "no_feasible_node"
    NODE_LEFT = "node_left"


@dataclass(frozen=True)
class ExecuteLocal:
    limit: int


@dataclass(frozen=True)
class Forward:
    target: NodeId


@dataclass(frozen=True)
class Drop:
    reason: DropReason


ScheduleDecision = Union[ExecuteLocal, Forward, Drop]


@dataclass(frozen=True)
class TrainingJob:
    job_id: int
    job_key: JobKey
    origin: NodeId
    triggered_at: float
    t_period: float
    payload_bytes: float
    hops_remaining: int
    visited: tuple[NodeId, ...] = ()
    hops: int = 0
    sent_bytes: float = 0.0

    def __post_init__(self) -> None:
        if self.payload_bytes <= 0:
            raise ValueError("payload_bytes must be > 0")
        if self.origin not in self.visited:
            object.__setattr__(self, "visited", (self.origin,) + tuple(self.visited))

    def forwarded_to(self, target: NodeId) -> "TrainingJob":
        return replace(
            self,
            visited=self.visited + (target,),
            hops_remaining=self.hops_remaining - 1,
            hops=self.hops + 1,
            sent_bytes=self.sent_bytes + self.payload_bytes,
        )


@dataclass(frozen=True)
class Candidate:
    node: NodeId
    utilization: float
    latency: float
    utilization_rank: int
    latency_rank: int
    combined: float


@dataclass(frozen=True)
class CandidateRanking:
    candidates: tuple[Candidate, ...]

    @property
    def winner(self) -> Candidate:
        return self.candidates[0]


@dataclass(frozen=True)
class SchedulerConfig:
    max_hops: int = DEFAULT_MAX_HOPS
    utilization_weight: float = 1.0
    latency_weight: float = 1.0
    coldstart_utilization: float = COLDSTART_UTILIZATION
    min_limit: int = MIN_LIMIT


def _min_ranks(values: Sequence[float]) -> list[int]:
    # 0-based competition ranks of an ascending sort; equal values share a rank
    order = sorted(values)
    first = {}
    for i, v in enumerate(order):
        first.setdefault(v, i)
    return [first[v] for v in values]


def rank_candidates(
    candidates: Sequence[tuple[NodeId, float, float]],
    utilization_weight: float = 1.0,
    latency_weight: float = 1.0,
) -> CandidateRanking:
    """Order ``(node, cpu_utilization, latency_ms)`` by combined rank index.

    Utilisation and latency are each ranked ascending; the candidate with the
    smallest (weighted) rank sum wins. Ties go to the lower latency, then to
    the lexicographically smaller node id.
    """
    if not candidates:
        raise ValueError("no candidates to rank")
    ur = _min_ranks([c[1] for c in candidates])
    lr = _min_ranks([c[2] for c in candidates])
    ranked = [
        Candidate(n, u, l, ri, li, utilization_weight * ri + latency_weight * li)
        for (n, u, l), ri, li in zip(candidates, ur, lr)
    ]
    ranked.sort(key=lambda c: (c.combined, c.latency, c.node))
    return CandidateRanking(tuple(ranked))


def remaining_budget(job: TrainingJob, now: float) -> float:
    return job.t_period - (now - job.triggered_at)


def feasible(
    avail: AvailabilityModel,
    model: RuntimeModel,
    job: TrainingJob,
    path: Sequence[tuple[float, float]],
    overheads: Overheads,
    now: float,
    min_limit: int = MIN_LIMIT,
) -> bool:
    """Whether some grantable limit finishes the job before its next trigger.

    The runtime curve decreases in the limit, so checking the largest
    grantable limit (everything free on the node) suffices.
    """
    if model.fit is None:
        raise ValueError("feasibility needs a fitted runtime model")
    r_max = avail.cpu_available
    if r_max < min_limit:
        return False
    if model.mem_estimate > avail.mem_available:
        return False
    t = predict_t_complete(model.fit, r_max, job.payload_bytes, path, overheads)
    return t <= remaining_budget(job, now)


def choose_limit(avail: AvailabilityModel, model: RuntimeModel, min_limit: int = MIN_LIMIT) -> int:
    """Limit for an execution on the node described by ``avail`` (0 if none fits)."""
    free = avail.cpu_available
    if free < min_limit:
        return 0
    if model.limit_state is None:
        return min(free, initial_limit(free, min_limit))
    return min(free, max(min_limit, model.limit_state.current_limit))


def coldstart_select(
    node: NodeId,
    local_utilization: float,
    neighbors: Sequence[NodeId],
    rng: np.random.Generator,
    threshold: float = COLDSTART_UTILIZATION,
) -> NodeId:
    """Local node unless it is busier than ``threshold``; else a random neighbour."""
    if local_utilization <= threshold or not neighbors:
        return node
    return neighbors[int(rng.integers(len(neighbors)))]


@dataclass
class Outcome:
    """A decision together with what was considered while making it."""

    decision: ScheduleDecision
    feasible_neighbors: tuple[NodeId, ...] = ()
    ranking: CandidateRanking | None = None
    coldstart: bool = False


def schedule(
    node: NodeId,
    job: TrainingJob,
    local_avail: AvailabilityModel,
    neighbor_avails: Mapping[NodeId, AvailabilityModel],
    runtime_model: RuntimeModel,
    now: float,
    rng: np.random.Generator,
    overheads: Overheads = Overheads(),
    config: SchedulerConfig = SchedulerConfig(),
) -> Outcome:
    """Decide what ``node`` does with ``job``.

    Only the node's own fresh snapshot (whose ``neighbor_metrics`` list the
    currently reachable direct neighbours) and the gossiped, possibly stale,
    snapshots of those neighbours are consulted.
    """
    neighbors = [n for n, _, _ in local_avail.neighbor_metrics]
    latency = {n: lat for n, lat, _ in local_avail.neighbor_metrics}
    unvisited = [n for n in neighbors if n not in job.visited]

    if runtime_model.fit is None:
        choice = coldstart_select(
            node, local_avail.cpu_utilization, unvisited, rng, config.coldstart_utilization
        )
        if choice == node:
            if local_avail.cpu_utilization > config.coldstart_utilization and neighbors:
                # every neighbour already tried
                return Outcome(Drop(DropReason.CYCLE), coldstart=True)
            limit = choose_limit(local_avail, runtime_model, config.min_limit)
            if limit == 0:
                return Outcome(Drop(DropReason.NO_FEASIBLE_NODE), coldstart=True)
            return Outcome(ExecuteLocal(limit), coldstart=True)
        if job.hops_remaining <= 0:
            return Outcome(Drop(DropReason.HOP_LIMIT), coldstart=True)
        return Outcome(Forward(choice), coldstart=True)

    if feasible(local_avail, runtime_model, job, (), overheads, now, config.min_limit):
        return Outcome(ExecuteLocal(choose_limit(local_avail, runtime_model, config.min_limit)))
    if job.hops_remaining <= 0:
        return Outcome(Drop(DropReason.HOP_LIMIT))
    if not neighbors:
        return Outcome(Drop(DropReason.NO_FEASIBLE_NODE))
    if not unvisited:
        return Outcome(Drop(DropReason.CYCLE))

    feasible_set = []
    for n in unvisited:
        avail = neighbor_avails.get(n)
        if avail is None:
            continue
        path = [local_avail.link_to(n)]
        if feasible(avail, runtime_model, job, path, overheads, now, config.min_limit):
            feasible_set.append(n)

    pool = feasible_set or unvisited
    ranking = rank_candidates(
        [(n, _utilization(neighbor_avails.get(n)), latency[n]) for n in pool],
        config.utilization_weight,
        config.latency_weight,
    )
    return Outcome(Forward(ranking.winner.node), tuple(feasible_set), ranking)


def _utilization(avail: AvailabilityModel | None) -> float:
    # a neighbour never heard from counts as fully busy
    return 1.0 if avail is None else avail.cpu_utilization
