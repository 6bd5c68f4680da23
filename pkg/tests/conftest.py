from __future__ import annotations

import pytest

from lossim.models import JobKey, Overheads
from lossim.sim import GroundTruthWork, PredictionJob, RunConfig, Workload
from lossim.topology import Layer, LinkState, NodeSpec, Topology, Trace

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def const_link(a: str, b: str, latency: float, bandwidth: float, duration: float) -> LinkState:
    return LinkState((a, b), Trace.constant(latency, duration), Trace.constant(bandwidth, duration))


def edge_clique(n: int, duration: float = 2000.0, latency: float = 5.0, bandwidth: float = 1e7, churn=()) -> Topology:
    ids = [f"e{i}" for i in range(n)]
    nodes = {nid: NodeSpec(Layer.EDGE, 1000, 1024) for nid in ids}
    links = {
        frozenset((a, b)): const_link(a, b, latency, bandwidth, duration)
        for i, a in enumerate(ids)
        for b in ids[i + 1:]
    }
    return Topology(nodes, links, duration, list(churn))


def saturating_workload(nodes: list[str], work: float = 3000.0, period_interval: float = 0.02) -> Workload:
    """Two prediction jobs per listed node, together reserving the whole node."""
    jobs, truth = [], {}
    for i, node in enumerate(nodes):
        for j in range(2):
            key = JobKey(f"s{2 * i + j}", "m")
            jobs.append(PredictionJob(key, node, 500, 100.0, 1000, period_interval, start_offset=1.0 + 3 * j + i))
            truth[key] = GroundTruthWork(key, work, noise_cv=0.05, payload_bytes=1e6, mem_peak=100.0, mem_cv=0.05)
    return Workload(jobs, truth)


@pytest.fixture
def small_config() -> RunConfig:
    topo = edge_clique(4)
    return RunConfig(
        topology=topo,
        workload=saturating_workload(["e0"]),
        seed=11,
        duration=1200.0,
        gossip_interval=3.0,
        scrape_interval=1.0,
        overheads=Overheads(1.0, 0.5),
        name="small",
    )
