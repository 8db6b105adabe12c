import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import activity, flat_latency, profile, region, workload
from hycls.model import (
    NEG_INF,
    ActivityMatrix,
    Assignment,
    BroadcasterProfile,
    ConfigError,
    GainDomainError,
    GainParams,
    LatencyModel,
    SlotWorkload,
    Version,
    broadcast_latency,
    gain,
    leased_instances,
    objective,
    utility,
    weighted_utility,
)

P = GainParams(1.0, 0.011)


def ladder_profile(q=6000, versions=((3000, "720p"),), n=1.0):
    dist = {Version("source", q): n}
    for bitrate, label in versions:
        dist[Version(label, bitrate)] = n
    return BroadcasterProfile("b", True, q, activity([[0], [0]]), dist, 1.0)


# -- broadcast latency ------------------------------------------------------


def test_latency_all_zero():
    b = profile("b")
    lm = flat_latency(["b"], ["r"])
    assert broadcast_latency(b, region("r"), b.source_version, lm, 0) == 0.0


def test_latency_sums_three_terms():
    b = ladder_profile()
    r = region("r", delivery={"source": 0.3, "720p": 0.3})
    lm = LatencyModel({("b", "r", 0): 0.5}, {(6000, 3000, "low"): 1.2})
    assert broadcast_latency(b, r, Version("720p", 3000), lm, 0) == pytest.approx(2.0, abs=1e-12)


def test_latency_clamps_upward_requests():
    b = profile("b", q=3000)
    r = region("r", delivery={"source": 0.1, "hi": 0.1})
    lm = LatencyModel({("b", "r", 0): 0.2}, {(3000, 3000, "low"): 0.8})
    assert broadcast_latency(b, r, Version("hi", 6000), lm, 0) == pytest.approx(1.1, abs=1e-12)


@pytest.mark.parametrize("missing", ["link", "transcode", "delivery"])
def test_latency_missing_entry_names_key(missing):
    b = profile("b", q=3000)
    link = {} if missing == "link" else {("b", "r", 0): 0.0}
    tc = {} if missing == "transcode" else {(3000, 3000, "low"): 0.0}
    r = region("r", delivery={} if missing == "delivery" else None)
    with pytest.raises(ConfigError) as exc:
        broadcast_latency(b, r, b.source_version, LatencyModel(link, tc), 0)
    assert "r" in str(exc.value)


@given(st.integers(1, 10_000), st.integers(0, 20_000))
def test_clamp_makes_latency_flat_above_source(q_b, extra):
    b = profile("b", q=q_b)
    r = region("r", delivery={"x": 0.0})
    lm = LatencyModel({("b", "r", 0): 0.1}, {(q_b, q_b, "low"): 0.7})
    lat = broadcast_latency(b, r, Version("x", q_b + extra), lm, 0)
    assert lat == broadcast_latency(b, r, Version("x", q_b), lm, 0)


# -- gain -------------------------------------------------------------------


def test_gain_at_zero_latency():
    assert gain(P, 0.0) == 1.0


def test_gain_at_57_seconds():
    # log1p is an independent route to ln(1 - beta*L)
    expected = 1.0 + math.log1p(-0.011 * 57)
    assert gain(P, 57.0) == pytest.approx(expected, abs=1e-12)
    assert gain(P, 57.0) == pytest.approx(0.0138, abs=1e-4)


@pytest.mark.parametrize("L", [91.0, 1 / 0.011, 1000.0])
def test_gain_domain_error(L):
    with pytest.raises(GainDomainError):
        gain(P, L)


@given(st.floats(0, 90.9), st.floats(0, 90.9))
def test_gain_strictly_decreasing(a, b):
    a, b = sorted((a, b))
    assert gain(P, a) >= gain(P, b)
    # below ~1e-9 s apart the two doubles can round to the same gain
    if b - a > 1e-9:
        assert gain(P, a) > gain(P, b)


def test_beta_must_be_positive():
    with pytest.raises(ValueError):
        GainParams(1.0, 0.0)


# -- utility ----------------------------------------------------------------


def test_utility_single_version_zero_latency():
    b = profile("b", viewers=10.0)
    lm = flat_latency(["b"], ["r"])
    assert utility(b, region("r"), lm, P, 0) == 10.0


def test_weighted_utility_two_versions():
    v1, v2 = Version("source", 3000), Version("480p", 1000)
    assert weighted_utility({v1: 0.5, v2: 0.25}, {v1: 8, v2: 2}) == pytest.approx(4.5)


@pytest.mark.parametrize("link", [0.0, 12.5, 40.0, 80.0])
def test_utility_empty_audience_is_zero(link):
    b = profile("b", viewers=0.0)
    lm = flat_latency(["b"], ["r"], link=link)
    assert utility(b, region("r"), lm, P, 0) == 0.0


def test_utility_out_of_domain_is_sentinel_even_without_viewers():
    b = profile("b", viewers=0.0)
    lm = flat_latency(["b"], ["r"], link=95.0)
    assert utility(b, region("r"), lm, P, 0) == NEG_INF


@settings(max_examples=60)
@given(st.floats(0, 80), st.floats(0, 1e4), st.floats(0, 50))
def test_utility_linear_in_viewers(link, n, k):
    lm = flat_latency(["b"], ["r"], link=link)
    base = utility(profile("b", viewers=n), region("r"), lm, P, 0)
    scaled = utility(profile("b", viewers=n * k), region("r"), lm, P, 0)
    assert scaled == pytest.approx(k * base, rel=1e-9, abs=1e-9)


def test_utility_is_pure():
    b = ladder_profile(n=3.0)
    r = region("r", delivery={"source": 0.3, "720p": 0.2})
    lm = LatencyModel({("b", "r", 0): 0.5}, {(6000, 6000, "low"): 1.0, (6000, 3000, "low"): 1.2})
    vals = {utility(b, r, lm, P, 0) for _ in range(5)}
    assert len(vals) == 1


# -- objective --------------------------------------------------------------


def _assign(mapping):
    return Assignment(mapping, {}, {})


def test_objective_min_of_two():
    w = workload(0, [{"b1", "b2"}])
    per, overall = objective(_assign({"b1": "r", "b2": "r"}), w, {("b1", "r"): 5, ("b2", "r"): 3})
    assert per == {0: 3} and overall == 3


def test_objective_singletons():
    w = workload(0, [{"b1"}, {"b2"}])
    util = {("b1", "r"): 5.0, ("b2", "r"): 2.0}
    per, overall = objective(_assign({"b1": "r", "b2": "r"}), w, util)
    assert sorted(per.values()) == [2.0, 5.0] and overall == 2.0


def test_objective_min_of_three():
    w = workload(0, [{"b1", "b2", "b3"}])
    util = {("b1", "r"): 4, ("b2", "r"): 4, ("b3", "r"): 7}
    assert objective(_assign({b: "r" for b in ("b1", "b2", "b3")}), w, util)[0] == {0: 4}


def test_objective_empty_slot_is_nan():
    per, overall = objective(_assign({}), workload(0, []), {})
    assert per == {} and math.isnan(overall)


def test_objective_requires_full_cover():
    with pytest.raises(ValueError):
        objective(_assign({"b1": "r"}), workload(0, [{"b1", "b2"}]), {})


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8))
def test_objective_equals_some_member(values):
    bs = [f"b{i}" for i in range(len(values))]
    util = {(b, "r"): v for b, v in zip(bs, values)}
    per, _ = objective(_assign({b: "r" for b in bs}), workload(0, [set(bs)]), util)
    assert per[0] in values and all(per[0] <= v for v in values)


# -- types ------------------------------------------------------------------


def test_non_partner_needs_source_only():
    with pytest.raises(ValueError):
        BroadcasterProfile("b", False, 3000, activity([[0]]), {Version("720p", 2500): 1.0}, 1.0)
    with pytest.raises(ValueError):
        BroadcasterProfile("b", False, 3000, activity([[0]]), {Version("source", 2500): 1.0}, 1.0)


@pytest.mark.parametrize("kw", [{"q": 0}, {"cpu": 0.0}, {"viewers": -1.0}])
def test_profile_invariants(kw):
    with pytest.raises(ValueError):
        profile("b", **kw)


def test_activity_matrix_binary_and_frozen():
    with pytest.raises(ValueError):
        ActivityMatrix(np.array([[0, 2]]))
    with pytest.raises(ValueError):
        ActivityMatrix(np.array([0, 1]))
    a = activity([[0, 1]])
    with pytest.raises(ValueError):
        a.d[0, 0] = 1
    assert a == activity([[0, 1]]) and a != activity([[1, 1]])


def test_region_invariants():
    with pytest.raises(ValueError):
        region("r", cpu=0.0)
    with pytest.raises(ValueError):
        region("r", p_bw=-1.0)
    assert region("c", kind="public_cloud").leased and not region("d").leased


@pytest.mark.parametrize(
    "events",
    [[set()], [{"a", "b"}, {"b"}]],
)
def test_workload_rejects_bad_partitions(events):
    with pytest.raises(ValueError):
        SlotWorkload(0, frozenset({"a", "b"}), tuple(frozenset(e) for e in events))


def test_workload_rejects_uncovered():
    with pytest.raises(ValueError):
        SlotWorkload(0, frozenset({"a", "b"}), (frozenset({"a"}),))


def test_assignment_tallies_sum_member_demand():
    a = Assignment.build(
        {"b1": "r1", "b2": "r1", "b3": "r2"}, ["r1", "r2", "r3"],
        {"b1": 1.5, "b2": 0.25, "b3": 2.0}, {"b1": 3.0, "b2": 1.0, "b3": 6.0},
    )
    assert a.compute == {"r1": 1.75, "r2": 2.0, "r3": 0.0}
    assert a.bandwidth == {"r1": 4.0, "r2": 6.0, "r3": 0.0}


def test_bandwidth_demand_counts_ingest_and_renditions():
    assert profile("b", q=3000).bandwidth_demand == 6.0
    assert ladder_profile(6000, ((2500, "720p"), (1000, "480p"))).bandwidth_demand == 15.5


@pytest.mark.parametrize(
    "demand,unit,expected",
    [(0.0, 700, 0), (1400, 700, 2), (701, 700, 2), (700, 700, 1), (0.1 + 0.2, 0.3, 1), (-1, 700, 0)],
)
def test_leased_instances(demand, unit, expected):
    assert leased_instances(demand, unit) == expected
