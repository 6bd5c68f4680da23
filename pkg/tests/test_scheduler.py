from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lossim.models import AvailabilityModel, JobKey, Overheads, RuntimeFit, RuntimeModel
from lossim.optimizer import LimitState
from lossim.scheduler import (
    Drop,
    DropReason,
    ExecuteLocal,
    Forward,
    SchedulerConfig,
    TrainingJob,
    choose_limit,
    coldstart_select,
    feasible,
    rank_candidates,
    schedule,
)

KEY = JobKey("s0", "m")
OV = Overheads(2.0, 1.0)


def avail(node, cpu, mem=1000.0, neighbours=(), cap=1000, t=0.0):
    return AvailabilityModel(node, t, cap, 1024, cpu, mem, tuple(neighbours))


def model(work=30000.0, limit=None, mem=100.0):
    # t_job = work / R
    fit = RuntimeFit(work, 1e-9, 1.0, 0.0)
    ls = LimitState(KEY, limit) if limit else None
    return RuntimeModel(KEY, 100.0, fit=fit, mem_estimate=mem, limit_state=ls)


def job(origin="e0", period=100.0, hops=4, visited=(), at=0.0):
    return TrainingJob(1, KEY, origin, at, period, 1e6, hops, tuple(visited))


RNG = np.random.default_rng(0)


def test_rank_examples():
    r = rank_candidates([("a", 0.2, 10.0), ("b", 0.5, 5.0), ("c", 0.1, 20.0)])
    # sums: a 1+1, b 2+0, c 0+2 -> all 2, lowest latency wins
    assert r.winner.node == "b"
    r = rank_candidates([("a", 0.1, 1.0), ("b", 0.5, 5.0)])
    assert r.winner.node == "a"


def test_rank_tie_on_everything_goes_to_smaller_id():
    r = rank_candidates([("n2", 0.3, 4.0), ("n1", 0.3, 4.0)])
    assert r.winner.node == "n1"


def test_rank_rejects_empty():
    with pytest.raises(ValueError):
        rank_candidates([])


def test_feasible_slack_and_tight_cases():
    m = model(work=30000.0)  # 60 s at 500 mc
    j = job(period=180.0)
    assert feasible(avail("e1", 500), m, j, [], OV, now=0.0)
    assert not feasible(avail("e1", 100), m, j, [], OV, now=0.0)  # 300 s
    # memory worst case above what is free
    assert not feasible(avail("e1", 1000, mem=50.0), m, j, [], OV, now=0.0)


def test_remaining_budget_shrinks_with_elapsed_time():
    m = model(work=30000.0)  # 30 s at 1000
    j = job(period=40.0, at=0.0)
    assert feasible(avail("e1", 1000), m, j, [], OV, now=0.0)
    assert not feasible(avail("e1", 1000), m, j, [], OV, now=8.0)


def test_local_execution_preferred_when_feasible():
    local = avail("e0", 1000, neighbours=[("e1", 1.0, 1e9)])
    out = schedule("e0", job(), local, {"e1": avail("e1", 1000)}, model(limit=400), 0.0, RNG, OV)
    assert out.decision == ExecuteLocal(400)


def test_feasible_neighbour_beats_infeasible_one():
    local = avail("e0", 0, neighbours=[("e1", 1.0, 1e9), ("e2", 50.0, 1e9)])
    nb = {"e1": avail("e1", 50), "e2": avail("e2", 900)}
    out = schedule("e0", job(), local, nb, model(), 0.0, RNG, OV)
    assert out.decision == Forward("e2")
    assert out.feasible_neighbors == ("e2",)


def test_best_infeasible_neighbour_when_none_fits():
    local = avail("e0", 0, neighbours=[("e1", 1.0, 1e9), ("e2", 50.0, 1e9)])
    nb = {"e1": avail("e1", 50), "e2": avail("e2", 40)}
    out = schedule("e0", job(), local, nb, model(), 0.0, RNG, OV)
    assert isinstance(out.decision, Forward)
    assert out.feasible_neighbors == ()


def test_drop_reasons():
    full = avail("e0", 0, neighbours=[("e1", 1.0, 1e9)])
    nb = {"e1": avail("e1", 0)}
    assert schedule("e0", job(hops=0), full, nb, model(), 0.0, RNG, OV).decision == Drop(DropReason.HOP_LIMIT)
    visited = job(visited=("e1",))
    assert schedule("e0", visited, full, nb, model(), 0.0, RNG, OV).decision == Drop(DropReason.CYCLE)
    alone = avail("e0", 0)
    assert schedule("e0", job(), alone, {}, model(), 0.0, RNG, OV).decision == Drop(DropReason.NO_FEASIBLE_NODE)


def test_coldstart_runs_locally_below_threshold():
    cold = RuntimeModel(KEY, 100.0)
    local = avail("e0", 300, neighbours=[("e1", 1.0, 1e9)])  # 70% busy
    out = schedule("e0", job(), local, {}, cold, 0.0, RNG, OV)
    assert out.coldstart and out.decision == ExecuteLocal(255)


def test_coldstart_forwards_to_random_unvisited_neighbour():
    cold = RuntimeModel(KEY, 100.0)
    local = avail("e0", 0, neighbours=[("e1", 1.0, 1e9), ("e2", 1.0, 1e9), ("e3", 1.0, 1e9)])
    seen = set()
    rng = np.random.default_rng(5)
    for _ in range(60):
        d = schedule("e0", job(visited=("e2",)), local, {}, cold, 0.0, rng, OV).decision
        assert isinstance(d, Forward)
        seen.add(d.target)
    assert seen == {"e1", "e3"}


def test_coldstart_select_threshold_is_inclusive():
    assert coldstart_select("e0", 0.85, ["e1"], RNG) == "e0"
    assert coldstart_select("e0", 0.86, ["e1"], RNG) == "e1"


def test_choose_limit_caps_at_free_cpu():
    assert choose_limit(avail("e0", 300), model(limit=500)) == 300
    assert choose_limit(avail("e0", 1000), model(limit=500)) == 500
    assert choose_limit(avail("e0", 1000), model()) == 850
    assert choose_limit(avail("e0", 5), model()) == 0


def test_token_records_path():
    j = job().forwarded_to("e1").forwarded_to("e2")
    assert j.visited == ("e0", "e1", "e2")
    assert j.hops == 2 and j.hops_remaining == 2
    assert j.sent_bytes == 2e6


@settings(max_examples=150, deadline=None)
@given(
    free=st.lists(st.integers(0, 1000), min_size=1, max_size=6),
    local_free=st.integers(0, 1000),
    limit=st.one_of(st.none(), st.integers(10, 1000)),
    work=st.floats(100.0, 1e5),
    seed=st.integers(0, 2**16),
)
def test_decisions_respect_locality_and_capacity(free, local_free, limit, work, seed):
    names = [f"n{i}" for i in range(len(free))]
    local = avail("me", local_free, neighbours=[(n, float(i + 1), 1e8) for i, n in enumerate(names)])
    nb = {n: avail(n, f) for n, f in zip(names, free)}
    m = model(work=work, limit=limit)
    j = TrainingJob(1, KEY, "me", 0.0, 100.0, 1e6, 3)
    out = schedule("me", j, local, nb, m, 0.0, np.random.default_rng(seed), OV, SchedulerConfig(max_hops=3))
    d = out.decision
    if feasible(local, m, j, [], OV, 0.0):
        assert isinstance(d, ExecuteLocal)
    if isinstance(d, ExecuteLocal):
        assert 0 < d.limit <= local.cpu_available
    if isinstance(d, Forward):
        assert d.target in names and d.target not in j.visited
