"""Layered mesh infrastructure: nodes, time-varying links, churn.

Adjacency is static; only link metrics drift and node membership changes.
Every query is scoped to direct neighbours so that no caller can see the
global node set through this API except the engine itself.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

NodeId = str

# Traces may be queried a hair past their last knot because of float
# accumulation in the event engine.
_TIME_EPS = 1e-6


class ScenarioError(ValueError):
    """Raised for malformed scenarios; ``violations`` lists every problem found."""

    def __init__(self, violations: Sequence[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class Layer(str, Enum):
    EDGE = "edge"
    FOG = "fog"
    CLOUD = "cloud"

    @property
    def rank(self) -> int:
        return _LAYER_RANK[self]


_LAYER_RANK = {Layer.EDGE: 0, Layer.FOG: 1, Layer.CLOUD: 2}


class ChurnKind(str, Enum):
    JOIN = "join"
    LEAVE = "leave"


@dataclass(frozen=True)
class NodeSpec:
    layer: Layer
    cpu_capacity: int  # millicores
    mem_capacity: int  # megabytes
    gateway: bool = False


@dataclass(frozen=True)
class Trace:
    """Piecewise-linear series of ``(time_s, value)`` knots."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    @classmethod
    def constant(cls, value: float, duration: float) -> "Trace":
        return cls((0.0, float(duration)), (float(value), float(value)))

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "Trace":
        pts = [(float(t), float(v)) for t, v in points]
        return cls(tuple(p[0] for p in pts), tuple(p[1] for p in pts))

    @property
    def start(self) -> float:
        return self.times[0]

    @property
    def end(self) -> float:
        return self.times[-1]

    def value_at(self, t: float) -> float:
        if t < self.start - _TIME_EPS or t > self.end + _TIME_EPS:
            raise ValueError(f"trace queried at t={t}, outside [{self.start}, {self.end}]")
        if len(self.times) == 2 and self.values[0] == self.values[1]:
            return self.values[0]
        t = min(max(t, self.start), self.end)
        i = bisect.bisect_right(self.times, t)
        if i >= len(self.times):
            return self.values[-1]
        if i == 0:
            return self.values[0]
        t0, t1 = self.times[i - 1], self.times[i]
        v0, v1 = self.values[i - 1], self.values[i]
        if t1 == t0:
            return v1
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)

    def problems(self, name: str, duration: float) -> list[str]:
        out = []
        if len(self.times) == 0 or len(self.times) != len(self.values):
            return [f"{name}: empty or ragged trace"]
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            out.append(f"{name}: knot times not sorted")
        if any(v <= 0 for v in self.values):
            out.append(f"{name}: non-positive value")
        if self.start > 0 or self.end < duration:
            out.append(f"{name}: trace covers [{self.start}, {self.end}], need [0, {duration}]")
        return out


@dataclass(frozen=True)
class LinkState:
    endpoints: tuple[NodeId, NodeId]
    latency_ms: Trace
    bandwidth_bps: Trace  # bytes per second

    @property
    def key(self) -> frozenset:
        return frozenset(self.endpoints)


@dataclass(frozen=True)
class ChurnEvent:
    time: float
    node: NodeId
    kind: ChurnKind


@dataclass
class Topology:
    nodes: dict[NodeId, NodeSpec]
    links: dict[frozenset, LinkState]
    duration: float
    churn_schedule: list[ChurnEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.churn_schedule = sorted(self.churn_schedule, key=lambda e: e.time)
        self._adj: dict[NodeId, list[NodeId]] = {n: [] for n in self.nodes}
        for key, link in self.links.items():
            a, b = link.endpoints
            if a in self._adj and b in self._adj and a != b:
                self._adj[a].append(b)
                self._adj[b].append(a)
        for n in self._adj:
            self._adj[n].sort()
        self._churn_by_node: dict[NodeId, list[ChurnEvent]] = {}
        for ev in self.churn_schedule:
            self._churn_by_node.setdefault(ev.node, []).append(ev)

    # -- validation -----------------------------------------------------

    def violations(self) -> list[str]:
        out: list[str] = []
        if self.duration <= 0:
            out.append("duration must be > 0")
        for nid, spec in self.nodes.items():
            if spec.cpu_capacity <= 0:
                out.append(f"node {nid}: cpu_capacity must be > 0")
            if spec.mem_capacity <= 0:
                out.append(f"node {nid}: mem_capacity must be > 0")
        for link in self.links.values():
            a, b = link.endpoints
            for end in (a, b):
                if end not in self.nodes:
                    out.append(f"link {a}-{b}: unknown node {end}")
            if a == b:
                out.append(f"link {a}-{b}: self loop")
                continue
            if a in self.nodes and b in self.nodes:
                sa, sb = self.nodes[a], self.nodes[b]
                if sa.layer != sb.layer and not (sa.gateway or sb.gateway):
                    out.append(f"link {a}-{b}: cross-layer link without a gateway endpoint")
            out.extend(link.latency_ms.problems(f"link {a}-{b} latency", self.duration))
            out.extend(link.bandwidth_bps.problems(f"link {a}-{b} bandwidth", self.duration))
        layers = {spec.layer for spec in self.nodes.values()}
        for lower in (Layer.EDGE, Layer.FOG):
            if lower in layers and any(l.rank > lower.rank for l in layers):
                members = [n for n, s in self.nodes.items() if s.layer == lower]
                if not any(self.nodes[n].gateway for n in members):
                    out.append(f"layer {lower.value}: needs a gateway node")
        for layer in layers:
            members = sorted(n for n, s in self.nodes.items() if s.layer == layer)
            for i, a in enumerate(members):
                for b in members[i + 1:]:
                    if frozenset((a, b)) not in self.links:
                        out.append(f"layer {layer.value}: {a} and {b} not adjacent")
        for ev in self.churn_schedule:
            if ev.node not in self.nodes:
                out.append(f"churn at t={ev.time}: unknown node {ev.node}")
            if ev.time < 0 or ev.time > self.duration:
                out.append(f"churn at t={ev.time}: outside [0, {self.duration}]")
        return out

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ScenarioError(problems)

    # -- queries --------------------------------------------------------

    def _check(self, node: NodeId) -> None:
        if node not in self.nodes:
            raise ScenarioError(f"unknown node id {node!r}")

    def adjacency(self, node: NodeId) -> list[NodeId]:
        self._check(node)
        return list(self._adj[node])

    def is_joined(self, node: NodeId, time: float) -> bool:
        self._check(node)
        events = self._churn_by_node.get(node, [])
        # A node whose first event is a join starts outside the mesh.
        joined = not (events and events[0].kind is ChurnKind.JOIN)
        for ev in events:
            if ev.time > time:
                break
            joined = ev.kind is ChurnKind.JOIN
        return joined

    def apply_churn(self, time: float) -> set[NodeId]:
        return {n for n in self.nodes if self.is_joined(n, time)}

    def neighbors(self, node: NodeId, time: float) -> list[NodeId]:
        """Adjacent nodes that are joined at ``time``; never multi-hop peers."""
        self._check(node)
        return [n for n in self._adj[node] if self.is_joined(n, time)]

    def link(self, a: NodeId, b: NodeId) -> LinkState:
        self._check(a)
        self._check(b)
        try:
            return self.links[frozenset((a, b))]
        except KeyError:
            raise ScenarioError(f"{a} and {b} are not direct neighbours") from None

    def link_metrics(self, a: NodeId, b: NodeId, time: float) -> tuple[float, float]:
        """Return ``(latency_ms, bandwidth_bytes_per_s)`` of the direct link a-b."""
        link = self.link(a, b)
        return link.latency_ms.value_at(time), link.bandwidth_bps.value_at(time)


def neighbors(topology: Topology, node: NodeId, time: float) -> list[NodeId]:
    return topology.neighbors(node, time)


def link_metrics(topology: Topology, a: NodeId, b: NodeId, time: float) -> tuple[float, float]:
    return topology.link_metrics(a, b, time)


def apply_churn(topology: Topology, time: float) -> set[NodeId]:
    return topology.apply_churn(time)


# -- trace generation ---------------------------------------------------


@dataclass(frozen=True)
class DriftParams:
    """Sinusoidal latency drift applied to each edge node's interface.

    A link's latency is ``base + drift(a) + drift(b) + trend * t``; only edge
    nodes drift, which mimics emulated WAN delay on their interfaces. Gateway
    nodes are stationary infrastructure and do not drift unless
    ``gateway_drift`` is set.
    """

    amplitude_ms: float = 8.0
    period_s: float = 5400.0
    cross_layer_trend_ms_per_h: float = 4.0
    step_s: float = 60.0
    gateway_drift: bool = False


BASE_LATENCY_MS = {
    (Layer.EDGE, Layer.EDGE): 4.0,
    (Layer.EDGE, Layer.FOG): 18.0,
    (Layer.FOG, Layer.FOG): 2.0,
    (Layer.CLOUD, Layer.FOG): 25.0,
    (Layer.CLOUD, Layer.CLOUD): 1.0,
    (Layer.CLOUD, Layer.EDGE): 40.0,
}

BASE_BANDWIDTH_BPS = {
    (Layer.EDGE, Layer.EDGE): 4e6,
    (Layer.EDGE, Layer.FOG): 8e6,
    (Layer.FOG, Layer.FOG): 50e6,
    (Layer.CLOUD, Layer.FOG): 25e6,
    (Layer.CLOUD, Layer.CLOUD): 100e6,
    (Layer.CLOUD, Layer.EDGE): 5e6,
}


def _pair(a: Layer, b: Layer) -> tuple[Layer, Layer]:
    return tuple(sorted((a, b), key=lambda l: l.value))  # type: ignore[return-value]


def drift_links(
    nodes: dict[NodeId, NodeSpec],
    adjacency: Iterable[tuple[NodeId, NodeId]],
    duration: float,
    seed: int,
    params: DriftParams = DriftParams(),
) -> dict[frozenset, LinkState]:
    """Build piecewise-linear link traces from the sinusoidal drift model."""
    rng = np.random.default_rng(seed)
    phase = {n: float(rng.uniform(0.0, 2 * math.pi)) for n in sorted(nodes)}
    n_steps = max(1, math.ceil(duration / params.step_s))
    times = np.linspace(0.0, duration, n_steps + 1)

    def drift(node: NodeId) -> np.ndarray:
        spec = nodes[node]
        if spec.layer is not Layer.EDGE or (spec.gateway and not params.gateway_drift):
            return np.zeros_like(times)
        w = 2 * math.pi / params.period_s
        return params.amplitude_ms * 0.5 * (1.0 + np.sin(w * times + phase[node]))

    links: dict[frozenset, LinkState] = {}
    for a, b in adjacency:
        la, lb = nodes[a].layer, nodes[b].layer
        pair = _pair(la, lb)
        lat = BASE_LATENCY_MS[pair] + drift(a) + drift(b)
        if la != lb:
            lat = lat + params.cross_layer_trend_ms_per_h * times / 3600.0
        bw = BASE_BANDWIDTH_BPS[pair]
        links[frozenset((a, b))] = LinkState(
            endpoints=(a, b),
            latency_ms=Trace(tuple(times.tolist()), tuple(np.round(lat, 6).tolist())),
            bandwidth_bps=Trace.constant(bw, duration),
        )
    return links
