from __future__ import annotations

import csv
import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lossim.metrics import (
    DROP_REASONS,
    IterationRow,
    JobCounts,
    MetricsReport,
    drop_rate_summary,
    drops_csv,
    hop_distribution,
    hops_csv,
    improvement_over_insitu,
    iteration_means,
    iterations_csv,
    merge_reports,
    modal_hops,
    report_csv,
    sweep_hops_csv,
)


def make(triggers, executions, drops=None, hops=None, seed=0, scenario="s", streams=2):
    drops = drops if drops is not None else {"hop_limit": triggers - executions}
    hops = hops if hops is not None else ({1: executions} if executions else {})
    return MetricsReport(scenario, seed, streams, 4, {"a/m": JobCounts(triggers, executions, drops)}, hops)


def test_all_local_is_a_point_mass():
    assert hop_distribution(make(5, 5, hops={0: 5})) == {0: 1.0}


def test_no_executions_gives_empty_histogram():
    r = make(4, 0, hops={})
    assert hop_distribution(r) == {}
    assert modal_hops(r) is None


def test_histogram_fractions_sum_to_one():
    d = hop_distribution(make(10, 10, hops={1: 3, 2: 5, 3: 2}))
    assert sum(d.values()) == pytest.approx(1.0)
    assert d[2] == 0.5


def test_drop_rate_is_drops_over_triggers():
    r = make(8, 6)
    assert r.drop_rate == 0.25
    assert make(0, 0, hops={}).drop_rate == 0.0


def test_improvement_reproduces_paper_style_bounds():
    def group(rate, seed=0):
        return [make(10000, round(10000 * (1 - rate)), seed=seed)]

    base = {4: group(1.0), 10: group(1.0)}
    los = {4: group(0.2662), 10: group(0.7826)}
    gain = improvement_over_insitu(los, base)
    assert gain[4] == pytest.approx(73.38)
    assert gain[10] == pytest.approx(21.74)


def test_improvement_needs_matching_runs():
    with pytest.raises(ValueError):
        improvement_over_insitu({2: [make(1, 1)]}, {4: [make(1, 0)]})
    with pytest.raises(ValueError):
        improvement_over_insitu({2: [make(1, 1, seed=1)]}, {2: [make(1, 0, seed=2)]})


def test_summary_quartiles():
    runs = [make(100, 100 - k, seed=k) for k in (10, 20, 30, 40, 50)]
    s = drop_rate_summary({6: runs})[6]
    assert s.runs == 5 and s.mean == pytest.approx(0.3)
    assert (s.min, s.q1, s.median, s.q3, s.max) == pytest.approx((0.1, 0.2, 0.3, 0.4, 0.5))


counts = st.builds(
    lambda e, drops, hops: (e, drops, hops),
    st.integers(0, 50),
    st.dictionaries(st.sampled_from(DROP_REASONS), st.integers(0, 20), max_size=3),
    st.lists(st.integers(0, 4), max_size=50),
)


def _report(spec, seed):
    e, drops, hop_list = spec
    hops = {}
    for h in hop_list[:e] + [1] * max(0, e - len(hop_list)):
        hops[h] = hops.get(h, 0) + 1
    t = e + sum(drops.values())
    return MetricsReport("s", seed, 2, 4, {"a/m": JobCounts(t, e, dict(drops))}, hops)


@settings(max_examples=100, deadline=None)
@given(a=counts, b=counts, c=counts)
def test_merge_is_associative_and_conserves_mass(a, b, c):
    ra, rb, rc = _report(a, 1), _report(b, 2), _report(c, 3)
    left = merge_reports([merge_reports([ra, rb]), rc])
    right = merge_reports([ra, merge_reports([rb, rc])])
    assert left.to_text() == right.to_text()
    flat = merge_reports([ra, rb, rc])
    assert flat.triggers == ra.triggers + rb.triggers + rc.triggers
    assert sum(flat.hops.values()) == flat.executions
    assert 0.0 <= flat.drop_rate <= 1.0


def test_text_round_trip_and_fixed_order():
    r = make(10, 7, drops={"cycle": 1, "hop_limit": 2}, hops={1: 4, 3: 3})
    text = r.to_text()
    assert MetricsReport.from_text(text).to_text() == text
    assert text.index('"schema_version"') < text.index('"scenario"') < text.index('"jobs"')


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_csv_layouts():
    rows = [
        IterationRow("a/m", 1, "e1", 400, 10.0, 12.0, 60.0, 0.8, True, 1),
        IterationRow("a/m", 2, "e1", 360, 11.0, 13.0, 60.0, 0.78, True, 1),
        IterationRow("b/m", 1, "e2", 500, 9.0, 11.0, 50.0, 0.78, True, 2),
    ]
    r = make(3, 3, hops={1: 2, 2: 1})
    r.iterations = rows
    assert _rows(report_csv(r))[0][:3] == ["job_key", "iteration", "node"]
    assert _rows(hops_csv(r))[1:] == [["1", "2", "0.666667"], ["2", "1", "0.333333"]]
    assert _rows(drops_csv(r))[0] == ["job_key", "triggers", "executions", *DROP_REASONS, "drop_rate"]
    means = iteration_means(r)
    assert means[0][:3] == (1, 2, 450.0)
    assert _rows(iterations_csv(r))[2][0] == "2"
    assert _rows(sweep_hops_csv({2: [r]}, 4))[0] == ["streams", "hops_0", "hops_1", "hops_2", "hops_3", "hops_4"]
