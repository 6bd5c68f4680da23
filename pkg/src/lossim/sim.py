"""Deterministic discrete-event engine for decentralised training placement.

Every node runs the same edge-manager loop: it scrapes its own resources,
gossips the snapshot to direct neighbours, triggers training for the
prediction jobs that live on it, and places those trainings with the local
scheduler. Executions draw their true duration from a hidden per-job work
amount; schedulers only ever see the resulting training records.

Events at equal timestamps are processed by kind priority and then by
insertion order, and all randomness comes from one seeded generator, so a
(scenario, seed) pair always replays to the same event log.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from typing import Any

import numpy as np

from .metrics import IterationRow, JobCounts, MetricsReport
from .models import (
    AvailabilityModel,
    JobKey,
    Overheads,
    RuntimeModel,
    TrainingRecord,
    scrape_availability,
    send_time,
)
from .optimizer import MIN_LIMIT, LimitState, residual
from .scheduler import (
    Drop,
    DropReason,
    ExecuteLocal,
    Forward,
    SchedulerConfig,
    TrainingJob,
    schedule,
)
from .topology import ChurnKind, NodeId, NodeSpec, ScenarioError, Topology

log = logging.getLogger(__name__)


class EventKind(IntEnum):
    # value doubles as the tie-break priority at equal timestamps
    CHURN = 0
    LATENCY_UPDATE = 1
    JOB_FINISH = 2
    RUNTIME_MODEL_BROADCAST = 3
    MONITORING_SCRAPE = 4
    AVAILABILITY_GOSSIP = 5
    JOB_ARRIVE = 6
    JOB_START = 7
    TRAINING_TRIGGER = 8


@dataclass(order=True)
class Event:
    time: float
    kind: EventKind
    seq: int
    payload: Any = field(default=None, compare=False)


@dataclass(frozen=True)
class GroundTruthWork:
    """Hidden cost of one training: CPU work and its noise, payload, memory."""

    job_key: JobKey
    work: float  # millicore-seconds
    noise_cv: float = 0.0
    payload_bytes: float = 5e6
    mem_peak: float = 128.0  # MB
    mem_cv: float = 0.0

    def __post_init__(self) -> None:
        if self.work <= 0:
            raise ValueError("work must be > 0")
        if self.noise_cv < 0:
            raise ValueError("noise_cv must be >= 0")


@dataclass(frozen=True)
class PredictionJob:
    job_key: JobKey
    node: NodeId
    cpu_reservation: int
    mem_reservation: float = 0.0
    trigger_every: int = 1000
    sample_interval: float = 0.25
    start_offset: float = 0.0

    @property
    def period(self) -> float:
        return self.trigger_every * self.sample_interval


@dataclass
class Workload:
    prediction_jobs: list[PredictionJob] = field(default_factory=list)
    ground_truth: dict[JobKey, GroundTruthWork] = field(default_factory=dict)


@dataclass
class RunConfig:
    topology: Topology
    workload: Workload
    seed: int = 0
    duration: float | None = None  # trigger horizon; defaults to the topology's
    gossip_interval: float = 15.0
    scrape_interval: float = 5.0
    max_hops: int = 4
    overheads: Overheads = Overheads(5.0, 2.0)
    k_sigma: float = 2.0
    utilization_weight: float = 1.0
    latency_weight: float = 1.0
    min_limit: int = MIN_LIMIT
    history_cap: int = 64
    min_fit_records: int = 3
    coldstart_utilization: float = 0.85
    name: str = "scenario"
    check_invariants: bool = True

    @property
    def horizon(self) -> float:
        return self.topology.duration if self.duration is None else self.duration

    @property
    def scheduler_config(self) -> SchedulerConfig:
        return SchedulerConfig(
            max_hops=self.max_hops,
            utilization_weight=self.utilization_weight,
            latency_weight=self.latency_weight,
            coldstart_utilization=self.coldstart_utilization,
            min_limit=self.min_limit,
        )

    def violations(self) -> list[str]:
        out = self.topology.violations()
        if self.horizon <= 0:
            out.append("duration must be > 0")
        if self.horizon > self.topology.duration:
            out.append("run duration exceeds topology trace coverage")
        if self.gossip_interval <= 0 or self.scrape_interval <= 0:
            out.append("gossip and scrape intervals must be > 0")
        if self.max_hops < 0:
            out.append("max_hops must be >= 0")
        reserved: dict[NodeId, float] = {}
        seen: set[JobKey] = set()
        for pj in self.workload.prediction_jobs:
            if pj.job_key in seen:
                out.append(f"duplicate job key {pj.job_key}")
            seen.add(pj.job_key)
            if pj.node not in self.topology.nodes:
                out.append(f"stream {pj.job_key}: unknown node {pj.node}")
                continue
            if pj.job_key not in self.workload.ground_truth:
                out.append(f"stream {pj.job_key}: no ground-truth work")
            if pj.period <= 0:
                out.append(f"stream {pj.job_key}: period must be > 0")
            reserved[pj.node] = reserved.get(pj.node, 0.0) + pj.cpu_reservation
        for node, cpu in reserved.items():
            if cpu > self.topology.nodes[node].cpu_capacity:
                out.append(f"node {node}: prediction reservations exceed capacity")
        return out

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ScenarioError(problems)

    def describe(self) -> dict[str, Any]:
        """Every knob of the run, defaults included, for echoing next to results."""
        return {
            "name": self.name,
            "seed": self.seed,
            "duration": self.horizon,
            "gossip_interval": self.gossip_interval,
            "scrape_interval": self.scrape_interval,
            "max_hops": self.max_hops,
            "overheads": asdict(self.overheads),
            "k_sigma": self.k_sigma,
            "utilization_weight": self.utilization_weight,
            "latency_weight": self.latency_weight,
            "min_limit": self.min_limit,
            "history_cap": self.history_cap,
            "min_fit_records": self.min_fit_records,
            "coldstart_utilization": self.coldstart_utilization,
            "nodes": {
                n: {"layer": s.layer.value, "millicores": s.cpu_capacity, "memory": s.mem_capacity, "gateway": s.gateway}
                for n, s in sorted(self.topology.nodes.items())
            },
            "streams": [
                {
                    "job_key": str(pj.job_key),
                    "node": pj.node,
                    "cpu_reservation": pj.cpu_reservation,
                    "mem_reservation": pj.mem_reservation,
                    "trigger_every": pj.trigger_every,
                    "sample_interval": pj.sample_interval,
                    "start_offset": pj.start_offset,
                    "ground_truth": {
                        k: v for k, v in asdict(self.workload.ground_truth[pj.job_key]).items() if k != "job_key"
                    }
                    if pj.job_key in self.workload.ground_truth
                    else None,
                }
                for pj in self.workload.prediction_jobs
            ],
        }


@dataclass
class _Running:
    job: TrainingJob
    limit: int
    mem: float
    t_job: float
    started_at: float


@dataclass
class _Node:
    id: NodeId
    spec: NodeSpec
    joined: bool
    predictions: list[PredictionJob] = field(default_factory=list)
    running: dict[int, _Running] = field(default_factory=dict)
    snapshot: AvailabilityModel | None = None
    neighbor_models: dict[NodeId, AvailabilityModel] = field(default_factory=dict)
    runtime_models: dict[JobKey, RuntimeModel] = field(default_factory=dict)
    in_flight: dict[JobKey, int] = field(default_factory=dict)

    def reservations(self) -> list[tuple[float, float]]:
        res = [(p.cpu_reservation, p.mem_reservation) for p in self.predictions]
        res.extend((r.limit, r.mem) for r in self.running.values())
        return res

    def cpu_used(self) -> float:
        return sum(p.cpu_reservation for p in self.predictions) + sum(r.limit for r in self.running.values())

    def admit(self, run: "_Running") -> None:
        self.running[run.job.job_id] = run


class InvariantViolation(AssertionError):
    pass


def _r(x: float) -> float:
    return round(float(x), 6)


class Engine:
    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.topo = config.topology
        self.rng = np.random.default_rng(config.seed)
        self.now = 0.0
        self._queue: list[Event] = []
        self._seq = 0
        self._job_ids = 0
        self.events: list[dict[str, Any]] = []
        self.nodes: dict[NodeId, _Node] = {
            n: _Node(n, spec, self.topo.is_joined(n, 0.0)) for n, spec in sorted(self.topo.nodes.items())
        }
        for pj in config.workload.prediction_jobs:
            self.nodes[pj.node].predictions.append(pj)
        self.counts: dict[JobKey, JobCounts] = {
            pj.job_key: JobCounts() for pj in config.workload.prediction_jobs
        }
        self.hops: dict[int, int] = {}
        self.iterations: list[IterationRow] = []
        self.model_arrivals: list[tuple[float, NodeId, JobKey, int]] = []
        self._touched: list[_Node] = []
        self._links = {
            n: [(m, self.topo.link(n, m)) for m in self.topo.adjacency(n)] for n in self.nodes
        }

    # -- plumbing -------------------------------------------------------

    def push(self, time: float, kind: EventKind, payload: Any = None) -> None:
        self._seq += 1
        heapq.heappush(self._queue, Event(time, kind, self._seq, payload))

    def emit(self, kind: str, node: NodeId | None, **payload: Any) -> None:
        self.events.append({"time": _r(self.now), "node": node, "kind": kind, **payload})

    def _trace_time(self) -> float:
        # after the horizon, in-flight jobs drain with the last trace values
        return min(self.now, self.topo.duration)

    def _neighbor_metrics(self, node: NodeId) -> tuple[tuple[NodeId, float, float], ...]:
        t = self._trace_time()
        return tuple(
            (n, link.latency_ms.value_at(t), link.bandwidth_bps.value_at(t))
            for n, link in self._links[node]
            if self.nodes[n].joined
        )

    def _scrape(self, node: _Node) -> AvailabilityModel:
        return scrape_availability(
            node.id, node.spec, node.reservations(), self._neighbor_metrics(node.id), self.now
        )

    def _check_capacity(self, nodes: Any = None) -> None:
        for node in self.nodes.values() if nodes is None else nodes:
            if node.cpu_used() > node.spec.cpu_capacity + 1e-9:
                raise InvariantViolation(
                    f"t={self.now}: node {node.id} over capacity ({node.cpu_used()} > {node.spec.cpu_capacity})"
                )

    # -- run ------------------------------------------------------------

    def run(self) -> MetricsReport:
        cfg = self.config
        horizon = cfg.horizon
        for node in self.nodes.values():
            if node.joined:
                node.snapshot = self._scrape(node)
        # bootstrap: every node starts with its neighbours' initial snapshots
        for node in self.nodes.values():
            if node.joined:
                for n, _, _ in self._neighbor_metrics(node.id):
                    node.neighbor_models[n] = self.nodes[n].snapshot  # type: ignore[assignment]
        for ev in self.topo.churn_schedule:
            if ev.time <= horizon:
                self.push(ev.time, EventKind.CHURN, ev)
        for pj in cfg.workload.prediction_jobs:
            if pj.start_offset <= horizon:
                self.push(pj.start_offset, EventKind.TRAINING_TRIGGER, pj)
        if math.isfinite(cfg.scrape_interval) and cfg.scrape_interval <= horizon:
            self.push(cfg.scrape_interval, EventKind.MONITORING_SCRAPE)
        if math.isfinite(cfg.gossip_interval) and cfg.gossip_interval <= horizon:
            self.push(cfg.gossip_interval, EventKind.AVAILABILITY_GOSSIP)

        handlers = {
            EventKind.CHURN: self._on_churn,
            EventKind.JOB_FINISH: self._on_finish,
            EventKind.RUNTIME_MODEL_BROADCAST: self._on_model,
            EventKind.MONITORING_SCRAPE: self._on_scrape,
            EventKind.AVAILABILITY_GOSSIP: self._on_gossip,
            EventKind.JOB_ARRIVE: self._on_arrive,
            EventKind.JOB_START: self._on_start,
            EventKind.TRAINING_TRIGGER: self._on_trigger,
        }
        if cfg.check_invariants:
            self._check_capacity()
        while self._queue:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            handlers[ev.kind](ev.payload)
            if cfg.check_invariants and self._touched:
                # only admissions can raise a node's usage
                self._check_capacity(self._touched)
            self._touched.clear()
        self._check_accounting()
        return self.report()

    def _check_accounting(self) -> None:
        for key, c in self.counts.items():
            if c.triggers != c.executions + c.dropped:
                raise InvariantViolation(
                    f"{key}: triggers {c.triggers} != executions {c.executions} + drops {c.dropped}"
                )

    def report(self) -> MetricsReport:
        return MetricsReport(
            scenario=self.config.name,
            seed=self.config.seed,
            stream_count=len(self.config.workload.prediction_jobs),
            max_hops=self.config.max_hops,
            jobs={str(k): self.counts[k] for k in sorted(self.counts)},
            hops=dict(sorted(self.hops.items())),
            iterations=list(self.iterations),
        )

    # -- periodic machinery ---------------------------------------------

    def _on_scrape(self, _: Any) -> None:
        for node in self.nodes.values():
            if node.joined:
                node.snapshot = self._scrape(node)
        nxt = self.now + self.config.scrape_interval
        if nxt <= self.config.horizon:
            self.push(nxt, EventKind.MONITORING_SCRAPE)

    def _on_gossip(self, payload: Any) -> None:
        if payload is None:
            sent = 0
            for node in self.nodes.values():
                if not node.joined:
                    continue
                current = {n for n, _, _ in self._neighbor_metrics(node.id)}
                for stale in [n for n in node.neighbor_models if n not in current]:
                    del node.neighbor_models[stale]
                if node.snapshot is None:
                    continue
                for n, lat, _ in self._neighbor_metrics(node.id):
                    self.push(self.now + lat / 1000.0, EventKind.AVAILABILITY_GOSSIP, (n, node.snapshot))
                    sent += 1
            self.emit("AvailabilityGossip", None, messages=sent)
            nxt = self.now + self.config.gossip_interval
            if nxt <= self.config.horizon:
                self.push(nxt, EventKind.AVAILABILITY_GOSSIP)
            return
        receiver, snap = payload
        node = self.nodes[receiver]
        if not node.joined:
            return
        old = node.neighbor_models.get(snap.node)
        if old is None or old.scraped_at <= snap.scraped_at:
            node.neighbor_models[snap.node] = snap

    def _on_churn(self, ev: Any) -> None:
        node = self.nodes[ev.node]
        if ev.kind is ChurnKind.LEAVE:
            if not node.joined:
                return
            node.joined = False
            for job_id in sorted(node.running):
                run = node.running.pop(job_id)
                self.counts[run.job.job_key].executions -= 1
                self.hops[run.job.hops] -= 1
                self._drop(run.job, DropReason.NODE_LEFT, node.id)
            node.neighbor_models.clear()
            node.snapshot = None
        else:
            if node.joined:
                return
            node.joined = True
            node.snapshot = self._scrape(node)
        self.emit("ChurnEvent", node.id, change=ev.kind.value)

    # -- training lifecycle ---------------------------------------------

    def _on_trigger(self, pj: PredictionJob) -> None:
        nxt = self.now + pj.period
        if nxt <= self.config.horizon:
            self.push(nxt, EventKind.TRAINING_TRIGGER, pj)
        origin = self.nodes[pj.node]
        if not origin.joined:
            return
        counts = self.counts[pj.job_key]
        counts.triggers += 1
        self._job_ids += 1
        job = TrainingJob(
            job_id=self._job_ids,
            job_key=pj.job_key,
            origin=pj.node,
            triggered_at=self.now,
            t_period=pj.period,
            payload_bytes=self.config.workload.ground_truth[pj.job_key].payload_bytes,
            hops_remaining=self.config.max_hops,
        )
        self.emit("TrainingTrigger", pj.node, job_key=str(pj.job_key), job_id=job.job_id)
        if pj.job_key in origin.in_flight:
            self._drop(job, DropReason.PREVIOUS_STILL_RUNNING, pj.node)
            return
        origin.in_flight[pj.job_key] = job.job_id
        self._decide(origin, job)

    def _decide(self, node: _Node, job: TrainingJob) -> None:
        local = self._scrape(node)
        model = node.runtime_models.get(job.job_key) or RuntimeModel(job.job_key, job.t_period)
        neighbor_avails = {n: node.neighbor_models[n] for n, _, _ in local.neighbor_metrics if n in node.neighbor_models}
        out = schedule(
            node.id,
            job,
            local,
            neighbor_avails,
            model,
            self.now,
            self.rng,
            self.config.overheads,
            self.config.scheduler_config,
        )
        decision = out.decision
        record: dict[str, Any] = {
            "job_key": str(job.job_key),
            "job_id": job.job_id,
            "hops": job.hops,
            "coldstart": out.coldstart,
        }
        if out.ranking is not None:
            record["candidates"] = [
                [c.node, _r(c.utilization), _r(c.latency), c.combined] for c in out.ranking.candidates
            ]
            record["feasible"] = list(out.feasible_neighbors)
        if isinstance(decision, ExecuteLocal):
            self.emit("Decision", node.id, decision="execute_local", limit=decision.limit, **record)
            self._start(node, job, decision.limit)
        elif isinstance(decision, Forward):
            self.emit("Decision", node.id, decision="forward", target=decision.target, **record)
            lat, bw = self.topo.link_metrics(node.id, decision.target, self._trace_time())
            delay = send_time(job.payload_bytes, [(lat, bw)])
            self.push(self.now + delay, EventKind.JOB_ARRIVE, (decision.target, job.forwarded_to(decision.target)))
        else:
            assert isinstance(decision, Drop)
            self.emit("Decision", node.id, decision="drop", reason=decision.reason.value, **record)
            self._drop(job, decision.reason, node.id)

    def _on_arrive(self, payload: Any) -> None:
        target, job = payload
        node = self.nodes[target]
        self.emit("JobArrive", target, job_key=str(job.job_key), job_id=job.job_id, hops=job.hops)
        if not node.joined:
            self._drop(job, DropReason.NODE_LEFT, target)
            return
        self._decide(node, job)

    def _drop(self, job: TrainingJob, reason: DropReason, at: NodeId) -> None:
        counts = self.counts[job.job_key]
        counts.drops[reason.value] = counts.drops.get(reason.value, 0) + 1
        if reason is not DropReason.PREVIOUS_STILL_RUNNING:
            origin = self.nodes[job.origin]
            if origin.in_flight.get(job.job_key) == job.job_id:
                del origin.in_flight[job.job_key]
        self.emit("Drop", at, job_key=str(job.job_key), job_id=job.job_id, reason=reason.value, hops=job.hops)

    def _start(self, node: _Node, job: TrainingJob, limit: int) -> None:
        execute_job(self, node, job, limit)

    def _on_start(self, payload: Any) -> None:
        node_id, job_id = payload
        run = self.nodes[node_id].running.get(job_id)
        if run is not None:
            self.emit("JobStart", node_id, job_key=str(run.job.job_key), job_id=job_id)

    def _on_finish(self, payload: Any) -> None:
        node_id, job_id = payload
        node = self.nodes[node_id]
        run = node.running.pop(job_id, None)
        if run is None:  # aborted by churn
            return
        job = run.job
        cfg = self.config
        t_complete = self.now - job.triggered_at
        met = t_complete <= job.t_period
        gt = cfg.workload.ground_truth[job.job_key]
        work_time = gt.work / run.limit
        rec = TrainingRecord(
            job_key=job.job_key,
            node=node_id,
            cpu_limit=run.limit,
            duration=run.t_job,
            cpu_utilization=min(1.0, work_time / run.t_job),
            mem_peak=run.mem,
            net_bytes=job.sent_bytes,
            met_period=met,
            finished_at=self.now,
        )
        current = node.runtime_models.get(job.job_key) or RuntimeModel(job.job_key, job.t_period)
        state = current.limit_state or LimitState(job.job_key, run.limit)
        state = state.observe(run.limit, t_complete, job.t_period, node.spec.cpu_capacity, cfg.min_limit)
        model = current.updated(
            rec,
            state,
            history_cap=cfg.history_cap,
            min_fit_records=cfg.min_fit_records,
            k_sigma=cfg.k_sigma,
        )
        node.runtime_models[job.job_key] = model
        _, rel = residual(t_complete, job.t_period)
        self.iterations.append(
            IterationRow(
                job_key=str(job.job_key),
                iteration=state.iteration,
                node=node_id,
                limit=run.limit,
                train_time=_r(run.t_job),
                t_complete=_r(t_complete),
                t_period=_r(job.t_period),
                relative_residual=_r(rel),
                met_period=met,
                hops=job.hops,
            )
        )
        self.emit(
            "JobFinish",
            node_id,
            job_key=str(job.job_key),
            job_id=job.job_id,
            limit=run.limit,
            t_job=_r(run.t_job),
            t_complete=_r(t_complete),
            met=met,
            next_limit=state.current_limit,
        )
        origin = self.nodes[job.origin]
        if origin.in_flight.get(job.job_key) == job.job_id:
            del origin.in_flight[job.job_key]
        self._broadcast(node_id, model, exclude=None)

    # -- runtime-model flooding -----------------------------------------

    def _broadcast(self, sender: NodeId, model: RuntimeModel, exclude: NodeId | None) -> None:
        for n, lat, _ in self._neighbor_metrics(sender):
            if n != exclude:
                self.push(self.now + lat / 1000.0, EventKind.RUNTIME_MODEL_BROADCAST, (n, sender, model))

    def _on_model(self, payload: Any) -> None:
        receiver, sender, model = payload
        node = self.nodes[receiver]
        if not node.joined:
            return
        cur = node.runtime_models.get(model.job_key)
        if cur is not None and cur.version >= model.version:
            return
        node.runtime_models[model.job_key] = model
        self.model_arrivals.append((self.now, receiver, model.job_key, model.version))
        self._broadcast(receiver, model, exclude=sender)


def execute_job(engine: Engine, node: _Node, job: TrainingJob, limit: int) -> _Running:
    """Admit ``job`` on ``node`` with ``limit`` millicores and schedule its end.

    The true training time is ``work / limit`` stretched by seeded Gaussian
    noise; the limit stays reserved through container start and stop.
    """
    free = node.spec.cpu_capacity - node.cpu_used()
    if limit > free + 1e-9 or limit <= 0:
        raise InvariantViolation(f"admission of {limit} mc on {node.id} with {free} free")
    gt = engine.config.workload.ground_truth[job.job_key]
    eps = float(engine.rng.normal(0.0, gt.noise_cv)) if gt.noise_cv > 0 else 0.0
    t_job = gt.work / limit * max(0.05, 1.0 + eps)
    mem = gt.mem_peak
    if gt.mem_cv > 0:
        mem = max(1.0, float(engine.rng.normal(gt.mem_peak, gt.mem_cv * gt.mem_peak)))
    run = _Running(job, limit, mem, t_job, engine.now)
    node.admit(run)
    engine._touched.append(node)
    engine.counts[job.job_key].executions += 1
    engine.hops[job.hops] = engine.hops.get(job.hops, 0) + 1
    ov = engine.config.overheads
    engine.push(engine.now + ov.t_cstart, EventKind.JOB_START, (node.id, job.job_id))
    engine.push(engine.now + ov.t_cstart + t_job + ov.t_cstop, EventKind.JOB_FINISH, (node.id, job.job_id))
    return run


def run(config: RunConfig) -> MetricsReport:
    return Engine(config).run()


def run_with_log(config: RunConfig) -> tuple[MetricsReport, list[dict[str, Any]]]:
    engine = Engine(config)
    report = engine.run()
    return report, engine.events


def event_log_lines(events: list[dict[str, Any]]) -> str:
    return "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in events)
