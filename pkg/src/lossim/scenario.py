"""Scenario files and the built-in testbeds.

A scenario file is YAML (JSON also parses) with these top-level keys::

    name: str
    duration: float            # trigger horizon in seconds
    drain: float               # extra trace coverage for jobs still in flight (default 3600)
    nodes:                     # node table
      - {id: e0, layer: edge, millicores: 1000, memory: 1024, gateway: true}
    adjacency:                 # undirected direct links
      - [e0, e1]
    links:                     # optional explicit traces, keyed by endpoints
      - endpoints: [e0, e1]
        latency: [[0, 5.0], [3600, 9.0]]        # (s, ms), piecewise linear
        bandwidth: [[0, 4.0e6], [3600, 4.0e6]]  # (s, bytes/s)
    drift:                     # generator for adjacency pairs without explicit traces
      {seed: 1, amplitude_ms: 8, period_s: 5400, cross_layer_trend_ms_per_h: 4, step_s: 60}
    churn:
      - {time: 600, node: e3, kind: leave}
    streams:                   # prediction jobs, one per sensor stream, in placement order
      - {stream: s0, model: lstm, node: e1, cpu_reservation: 500, mem_reservation: 200,
         trigger_every: 1000, sample_interval: 0.25, start_offset: 12.0,
         work: 90000, noise_cv: 0.05, payload_bytes: 8.0e6, mem_peak: 180, mem_cv: 0.05}
    run:                       # engine defaults, all optional
      {gossip_interval: 15, scrape_interval: 5, max_hops: 4, t_cstart: 5, t_cstop: 2, k_sigma: 2}

Built-in scenarios are addressed by name instead of a path:
``paper-testbed`` and ``optimization-testbed``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .models import JobKey, Overheads
from .sim import GroundTruthWork, PredictionJob, RunConfig, Workload
from .topology import (
    ChurnEvent,
    ChurnKind,
    DriftParams,
    Layer,
    LinkState,
    NodeSpec,
    ScenarioError,
    Topology,
    Trace,
    drift_links,
)

BUILTINS = ("paper-testbed", "optimization-testbed")

# cloud / fog / edge flavours: (instances, vCPU, memory GB)
TESTBED_FLAVORS = {Layer.CLOUD: (6, 2, 4), Layer.FOG: (4, 1, 2), Layer.EDGE: (5, 1, 1)}
MODELS = ("lstm", "autoencoder")
# CPU a training needs to just meet its period, in millicores
SUSTAIN_MC = {"lstm": 330.0, "autoencoder": 250.0}


@dataclass
class Scenario:
    name: str
    topology: Topology
    workload: Workload
    duration: float
    run_defaults: dict[str, Any] = field(default_factory=dict)

    def with_streams(self, n: int) -> "Scenario":
        """The first ``n`` streams in placement order."""
        if n > len(self.workload.prediction_jobs):
            raise ScenarioError(f"scenario {self.name} defines only {len(self.workload.prediction_jobs)} streams")
        jobs = self.workload.prediction_jobs[:n]
        gt = {pj.job_key: self.workload.ground_truth[pj.job_key] for pj in jobs}
        return replace(self, workload=Workload(list(jobs), gt))

    def run_config(self, seed: int = 0, **overrides: Any) -> RunConfig:
        params = dict(self.run_defaults)
        params.update({k: v for k, v in overrides.items() if v is not None})
        t_cstart = params.pop("t_cstart", 5.0)
        t_cstop = params.pop("t_cstop", 2.0)
        params.setdefault("overheads", Overheads(t_cstart, t_cstop))
        return RunConfig(
            topology=self.topology,
            workload=self.workload,
            seed=seed,
            duration=self.duration,
            name=self.name,
            **params,
        )


def derive_seed(base_seed: int, stream_count: int, repeat: int) -> int:
    """Run seed for one sweep cell: first 4 bytes of sha256("base:streams:repeat")."""
    digest = hashlib.sha256(f"{base_seed}:{stream_count}:{repeat}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


# -- built-ins ----------------------------------------------------------


def _clique(ids: list[str]) -> list[tuple[str, str]]:
    return [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]]


def paper_testbed(
    streams: int = 10,
    seed: int = 0,
    duration: float = 4 * 3600.0,
    time_scale: float = 1.0,
    drain: float = 3600.0,
    uplink_to_gateway_only: bool = True,
) -> Scenario:
    """Three-layer testbed: 6 cloud, 4 fog and 5 edge instances.

    Layers are internal cliques; one edge node and one fog node act as
    gateways and are the only nodes linked to the layer above. By default
    each gateway has a single uplink (edge gateway to fog gateway, fog
    gateway to one cloud node); ``uplink_to_gateway_only=False`` links each
    gateway to every node of the layer above instead. Streams are added two
    per edge device, gateway device last, and each pair of prediction jobs
    reserves the whole device.
    """
    if streams < 0 or streams > 2 * TESTBED_FLAVORS[Layer.EDGE][0]:
        raise ScenarioError(f"paper-testbed supports 0..10 streams, got {streams}")
    rng = np.random.default_rng(seed)
    nodes: dict[str, NodeSpec] = {}
    ids: dict[Layer, list[str]] = {}
    for layer, prefix in ((Layer.EDGE, "e"), (Layer.FOG, "f"), (Layer.CLOUD, "c")):
        count, vcpu, mem_gb = TESTBED_FLAVORS[layer]
        ids[layer] = [f"{prefix}{i}" for i in range(count)]
        for i, nid in enumerate(ids[layer]):
            gateway = i == 0 and layer is not Layer.CLOUD
            nodes[nid] = NodeSpec(layer, vcpu * 1000, mem_gb * 1024, gateway)
    adjacency = _clique(ids[Layer.EDGE]) + _clique(ids[Layer.FOG]) + _clique(ids[Layer.CLOUD])
    if uplink_to_gateway_only:
        adjacency += [("e0", "f0"), ("f0", "c0")]
    else:
        adjacency += [("e0", f) for f in ids[Layer.FOG]]
        adjacency += [("f0", c) for c in ids[Layer.CLOUD]]
    total = (duration + drain) * time_scale
    drift = DriftParams(period_s=5400.0 * time_scale, step_s=60.0 * time_scale)
    links = drift_links(nodes, adjacency, total, seed=int(rng.integers(2**31)), params=drift)
    if time_scale != 1.0:
        links = {k: _scale_link(l, time_scale) for k, l in links.items()}
    topo = Topology(nodes, links, total)

    placement = ["e1", "e2", "e3", "e4", "e0"]
    jobs: list[PredictionJob] = []
    truth: dict[JobKey, GroundTruthWork] = {}
    for i in range(streams):
        model = MODELS[i % 2]
        key = JobKey(f"s{i}", model)
        node = placement[i // 2]
        interval = float(rng.uniform(0.2, 0.3)) * time_scale
        period = 1000 * interval
        jobs.append(
            PredictionJob(
                key,
                node,
                cpu_reservation=500,
                mem_reservation=200.0,
                trigger_every=1000,
                sample_interval=interval,
                start_offset=round(float(rng.uniform(0.0, period)), 6),
            )
        )
        sustain = SUSTAIN_MC[model]
        truth[key] = GroundTruthWork(
            key,
            work=sustain * period,
            noise_cv=0.05,
            payload_bytes=(8e6 if model == "lstm" else 4e6),
            mem_peak=(180.0 if model == "lstm" else 120.0),
            mem_cv=0.05,
        )
    defaults = {
        "gossip_interval": 15.0 * time_scale,
        "scrape_interval": 5.0 * time_scale,
        "max_hops": 4,
        "t_cstart": 5.0 * time_scale,
        "t_cstop": 2.0 * time_scale,
    }
    return Scenario("paper-testbed", topo, Workload(jobs, truth), duration * time_scale, defaults)


def _scale_link(link: LinkState, s: float) -> LinkState:
    # shrink every delay by ``s``: latency values scale, transfer rates grow
    lat = Trace(link.latency_ms.times, tuple(v * s for v in link.latency_ms.values))
    bw = Trace(link.bandwidth_bps.times, tuple(v / s for v in link.bandwidth_bps.values))
    return LinkState(link.endpoints, lat, bw)


def optimization_testbed(
    jobs: int = 26,
    iterations: int = 55,
    seed: int = 0,
    time_scale: float = 1.0,
) -> Scenario:
    """Stationary local-only workload for watching the limit adaptation.

    One edge node per prediction job; the prediction job leaves 470
    millicores free, so the first training runs at 399 millicores and
    finishes in a fifth of its period.
    """
    rng = np.random.default_rng(seed)
    ids = [f"n{i:02d}" for i in range(jobs)]
    nodes = {n: NodeSpec(Layer.EDGE, 1000, 1024) for n in ids}
    periods = [1000 * float(rng.uniform(0.18, 0.3)) * time_scale for _ in ids]
    duration = 2.0 * iterations * max(periods)
    links = {
        frozenset((a, b)): LinkState((a, b), Trace.constant(4.0 * time_scale, duration), Trace.constant(4e6 / time_scale, duration))
        for a, b in _clique(ids)
    }
    topo = Topology(nodes, links, duration)
    overhead = 7.0 * time_scale
    pjs, truth = [], {}
    for i, (nid, period) in enumerate(zip(ids, periods)):
        key = JobKey(f"s{i}", MODELS[i % 2])
        pjs.append(
            PredictionJob(
                key,
                nid,
                cpu_reservation=530,
                mem_reservation=200.0,
                trigger_every=1000,
                sample_interval=period / 1000,
                start_offset=round(float(rng.uniform(0.0, period)), 6),
            )
        )
        truth[key] = GroundTruthWork(
            key, work=399 * (0.2 * period - overhead), noise_cv=0.03, payload_bytes=4e6, mem_peak=120.0
        )
    defaults = {
        "gossip_interval": float("inf"),
        "scrape_interval": 5.0 * time_scale,
        "max_hops": 0,
        "t_cstart": 5.0 * time_scale,
        "t_cstop": 2.0 * time_scale,
    }
    return Scenario("optimization-testbed", topo, Workload(pjs, truth), duration, defaults)


# -- files --------------------------------------------------------------


def _require(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise ScenarioError(f"{where}: missing '{key}'")
    return d[key]


def scenario_from_dict(doc: dict[str, Any]) -> Scenario:
    problems: list[str] = []
    name = str(doc.get("name", "scenario"))
    duration = float(_require(doc, "duration", "scenario"))
    drain = float(doc.get("drain", 3600.0))
    total = duration + drain
    nodes: dict[str, NodeSpec] = {}
    for row in _require(doc, "nodes", "scenario"):
        try:
            nodes[str(row["id"])] = NodeSpec(
                Layer(row["layer"]), int(row["millicores"]), int(row["memory"]), bool(row.get("gateway", False))
            )
        except (KeyError, ValueError) as exc:
            problems.append(f"node {row!r}: {exc}")
    explicit: dict[frozenset, LinkState] = {}
    for row in doc.get("links", []) or []:
        a, b = (str(x) for x in row["endpoints"])
        explicit[frozenset((a, b))] = LinkState(
            (a, b), Trace.from_points(row["latency"]), Trace.from_points(row["bandwidth"])
        )
    adjacency = [tuple(str(x) for x in pair) for pair in doc.get("adjacency", []) or []]
    for key, link in explicit.items():
        if tuple(link.endpoints) not in adjacency and tuple(reversed(link.endpoints)) not in adjacency:
            adjacency.append(tuple(link.endpoints))
    unknown = [p for p in adjacency if p[0] not in nodes or p[1] not in nodes]
    for a, b in unknown:
        problems.append(f"adjacency {a}-{b}: unknown node")
    generated = [p for p in adjacency if frozenset(p) not in explicit and p not in unknown]
    drift = dict(doc.get("drift", {}) or {})
    drift_seed = int(drift.pop("seed", 0))
    links = dict(explicit)
    if generated:
        links.update(drift_links(nodes, generated, total, drift_seed, DriftParams(**drift)))
    churn = [
        ChurnEvent(float(c["time"]), str(c["node"]), ChurnKind(c["kind"])) for c in doc.get("churn", []) or []
    ]
    jobs, truth = [], {}
    for row in doc.get("streams", []) or []:
        try:
            key = JobKey(str(row["stream"]), str(row.get("model", "model")))
            jobs.append(
                PredictionJob(
                    key,
                    str(row["node"]),
                    cpu_reservation=int(row["cpu_reservation"]),
                    mem_reservation=float(row.get("mem_reservation", 0.0)),
                    trigger_every=int(row.get("trigger_every", 1000)),
                    sample_interval=float(row["sample_interval"]),
                    start_offset=float(row.get("start_offset", 0.0)),
                )
            )
            truth[key] = GroundTruthWork(
                key,
                work=float(row["work"]),
                noise_cv=float(row.get("noise_cv", 0.0)),
                payload_bytes=float(row.get("payload_bytes", 5e6)),
                mem_peak=float(row.get("mem_peak", 128.0)),
                mem_cv=float(row.get("mem_cv", 0.0)),
            )
        except (KeyError, ValueError) as exc:
            problems.append(f"stream {row!r}: {exc}")
    if problems:
        raise ScenarioError(problems)
    topo = Topology(nodes, links, total, churn)
    return Scenario(name, topo, Workload(jobs, truth), duration, dict(doc.get("run", {}) or {}))


def load_scenario(ref: str | Path, streams: int | None = None, seed: int = 0, time_scale: float = 1.0) -> Scenario:
    """Resolve a built-in name or a YAML/JSON path; optionally keep the first ``streams``."""
    ref_s = str(ref)
    if ref_s == "paper-testbed":
        return paper_testbed(10 if streams is None else streams, seed=seed, time_scale=time_scale)
    if ref_s == "optimization-testbed":
        sc = optimization_testbed(seed=seed, time_scale=time_scale)
    else:
        path = Path(ref_s)
        if not path.exists():
            raise ScenarioError(f"no such scenario file or built-in: {ref_s}")
        try:
            doc = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ScenarioError(f"{path}: top level must be a mapping")
        try:
            sc = scenario_from_dict(doc)
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}: malformed scenario ({exc!r})") from exc
    return sc if streams is None else sc.with_streams(streams)
