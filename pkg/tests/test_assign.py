import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import region, workload
from hycls.assign import (
    _ratio,
    Aggregation,
    CapacityLedger,
    InfeasibleAssignment,
    InstanceTooLarge,
    aggregate,
    assignment_value,
    exact_assign,
    greedy_assign,
    lb_c_assign,
    lb_v_assign,
    prune,
)
from hycls.model import NEG_INF


def grid(bs, rs, rows):
    return {(b, r): float(u) for b, row in zip(bs, rows) for r, u in zip(rs, row)}


def ledger(regions, **kw):
    return CapacityLedger.fresh(regions, **kw)


def brute_value(w, util, regions, demand, caps, agg):
    """Best aggregate value by plain enumeration (no ordering tricks)."""
    bs = sorted(w.broadcasters)
    best = None
    for combo in itertools.product(regions, repeat=len(bs)):
        load = {r: 0.0 for r in regions}
        for b, r in zip(bs, combo):
            load[r] += demand[b]
        if any(load[r] > caps[r] + 1e-9 for r in regions):
            continue
        a = dict(zip(bs, combo))
        mins = [min(util.get((b, a[b]), NEG_INF) for b in e) for e in w.events]
        v = aggregate(mins, agg)
        best = v if best is None else max(best, v)
    return best


# -- prune ------------------------------------------------------------------


def test_prune_worked_example():
    w = workload(0, [{"b1", "b2"}])
    util = grid(["b1", "b2"], ["r1", "r2"], [[5, 3], [4, 6]])
    c = prune(w, util, ["r1", "r2"])
    assert c.bounds == {0: 4.0}
    assert c.pairs() == {("b1", "r1"): 5.0, ("b2", "r1"): 4.0, ("b2", "r2"): 6.0}
    assert not c.fallback_events


def test_prune_singleton_keeps_argmax_ties():
    w = workload(0, [{"b"}])
    c = prune(w, grid(["b"], ["r1", "r2", "r3"], [[2, 7, 7]]), ["r1", "r2", "r3"])
    assert [r for r, _ in c.candidates["b"]] == ["r2", "r3"]
    c = prune(w, grid(["b"], ["r1", "r2", "r3"], [[2, 7, 6]]), ["r1", "r2", "r3"])
    assert [r for r, _ in c.candidates["b"]] == ["r2"]


def test_prune_equal_utilities_removes_nothing():
    w = workload(0, [{"b1", "b2"}, {"b3"}])
    util = grid(["b1", "b2", "b3"], ["r1", "r2"], [[3, 3]] * 3)
    assert len(prune(w, util, ["r1", "r2"]).pairs()) == 6


def test_prune_skips_unreachable_and_infinite():
    w = workload(0, [{"b1", "b2"}])
    util = {("b1", "r1"): 5.0, ("b1", "r2"): NEG_INF, ("b2", "r1"): 1.0, ("b2", "r2"): 9.0}
    c = prune(w, util, ["r1", "r2"], reachable=lambda b, r: not (b == "b2" and r == "r1"))
    # no region usable by both members -> fallback to each member's best
    assert c.fallback_events == {0}
    assert c.bounds[0] == 5.0
    assert c.pairs() == {("b1", "r1"): 5.0, ("b2", "r2"): 9.0}


@settings(max_examples=200)
@given(st.data())
def test_prune_invariants(data):
    nb = data.draw(st.integers(1, 5))
    nr = data.draw(st.integers(1, 4))
    bs, rs = [f"b{i}" for i in range(nb)], [f"r{j}" for j in range(nr)]
    rows = data.draw(st.lists(st.lists(st.integers(0, 5), min_size=nr, max_size=nr),
                              min_size=nb, max_size=nb))
    labels = data.draw(st.lists(st.integers(0, 2), min_size=nb, max_size=nb))
    events = {}
    for b, k in zip(bs, labels):
        events.setdefault(k, set()).add(b)
    w = workload(0, list(events.values()))
    c = prune(w, grid(bs, rs, rows), rs)
    ev = w.event_of()
    for b in bs:
        assert c.candidates[b], "every broadcaster keeps a candidate"
        assert all(u >= c.bounds[ev[b]] for _, u in c.candidates[b])


# -- greedy -----------------------------------------------------------------


def test_greedy_nonbinding_each_to_argmax():
    rs = [region("r1"), region("r2")]
    w = workload(0, [{"b1"}, {"b2"}])
    util = grid(["b1", "b2"], ["r1", "r2"], [[5, 2], [1, 4]])
    a = greedy_assign(prune(w, util, ["r1", "r2"]), ledger(rs), {"b1": 1.0, "b2": 1.0})
    assert a.mapping == {"b1": "r1", "b2": "r2"}


def test_greedy_contended_region_goes_to_higher_ratio():
    rs = [region("r1", cpu=1.0, p_cpu=1.0), region("r2", cpu=5.0, p_cpu=1.0)]
    w = workload(0, [{"b1"}, {"b2"}])
    util = grid(["b1", "b2"], ["r1", "r2"], [[5, 1], [4, 2]])
    a = greedy_assign(prune(w, util, ["r1", "r2"]), ledger(rs), {"b1": 1.0, "b2": 1.0})
    assert a.mapping == {"b1": "r1", "b2": "r2"}
    assert a.repaired == {"b2"}


def test_greedy_empty():
    w = workload(0, [])
    a = greedy_assign(prune(w, {}, ["r1"]), ledger([region("r1")]), {})
    assert a.mapping == {} and a.compute == {"r1": 0.0}


def test_greedy_overflow_and_infeasible():
    rs = [region("dc", cpu=2.0), region("c", kind="public_cloud", cpu=1.0, p_cpu=1.0)]
    w = workload(0, [{"b1"}, {"b2"}])
    util = {("b1", "c"): 3.0, ("b2", "c"): 2.0}
    a = greedy_assign(prune(w, util, ["dc", "c"]), ledger(rs), {"b1": 1.0, "b2": 1.0},
                      overflow_region="dc")
    assert a.mapping == {"b1": "c", "b2": "dc"} and a.overflow == {"b2"}
    with pytest.raises(InfeasibleAssignment) as exc:
        greedy_assign(prune(w, util, ["dc", "c"]), ledger(rs), {"b1": 1.0, "b2": 1.0}, slot=7)
    assert exc.value.unplaced == ["b2"] and exc.value.slot == 7


def test_greedy_ledger_decrements():
    rs = [region("r1", cpu=3.0)]
    w = workload(0, [{"b1"}, {"b2"}])
    lg = ledger(rs)
    greedy_assign(prune(w, grid(["b1", "b2"], ["r1"], [[1], [1]]), ["r1"]), lg,
                  {"b1": 1.0, "b2": 1.5})
    assert lg.remaining_compute["r1"] == pytest.approx(0.5)


def _random_instance(rng, nb, nr, cap=1e6, grid_values=None):
    bs = [f"b{i}" for i in range(nb)]
    rs = [region(f"r{j}", cpu=cap, p_cpu=rng.choice([0.0, 0.5, 1.0])) for j in range(nr)]
    util = {}
    for b in bs:
        for r in rs:
            if rng.random() < 0.9:
                util[(b, r.id)] = float(rng.choice(grid_values)) if grid_values else rng.uniform(-5, 20)
        if not any((b, r.id) in util for r in rs):
            util[(b, rs[0].id)] = 1.0
    labels = [rng.randrange(3) for _ in bs]
    events = {}
    for b, k in zip(bs, labels):
        events.setdefault(k, set()).add(b)
    demand = {b: rng.choice([0.5, 1.0, 2.0]) for b in bs}
    return workload(0, list(events.values())), util, rs, demand


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_greedy_never_beats_exact(seed):
    rng = random.Random(seed)
    w, util, rs, demand = _random_instance(rng, rng.randint(1, 5), rng.randint(1, 3), cap=2.5)
    try:
        g = greedy_assign(prune(w, util, [r.id for r in rs]), ledger(rs), demand)
    except InfeasibleAssignment:
        return
    for agg in Aggregation:
        ex = exact_assign(w, util, ledger(rs), agg, demand)
        assert set(ex.mapping) == set(w.broadcasters)
        assert assignment_value(g, w, util, agg) <= assignment_value(ex, w, util, agg) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_greedy_ledger_never_negative(seed):
    rng = random.Random(seed)
    w, util, rs, demand = _random_instance(rng, rng.randint(1, 8), rng.randint(1, 4), cap=3.0)
    lg = ledger(rs)
    try:
        a = greedy_assign(prune(w, util, [r.id for r in rs]), lg, demand)
    except InfeasibleAssignment as exc:
        assert exc.unplaced
        return
    assert all(v >= -1e-9 for v in lg.remaining_compute.values())
    assert set(a.mapping) == set(w.broadcasters)


# -- exact oracle ------------------------------------------------------------


def test_exact_single_broadcaster_picks_feasible_argmax():
    rs = [region("r1", cpu=0.5), region("r2"), region("r3")]
    w = workload(0, [{"b"}])
    util = grid(["b"], ["r1", "r2", "r3"], [[9, 4, 6]])
    assert exact_assign(w, util, ledger(rs), "sum", {"b": 1.0}).mapping == {"b": "r3"}


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Aggregation)))
def test_exact_matches_plain_enumeration(seed, agg):
    rng = random.Random(seed)
    w, util, rs, demand = _random_instance(rng, 4, 3, cap=2.0)
    caps = {r.id: r.compute_cap for r in rs}
    expected = brute_value(w, util, [r.id for r in rs], demand, caps, agg)
    try:
        got = exact_assign(w, util, ledger(rs), agg, demand)
    except InfeasibleAssignment:
        assert expected is None or expected == NEG_INF
        return
    assert assignment_value(got, w, util, agg) == expected


def test_exact_size_cap():
    rs = [region(f"r{j}") for j in range(5)]
    w = workload(0, [{"b"}])
    with pytest.raises(InstanceTooLarge):
        exact_assign(w, {}, ledger(rs), "sum", {"b": 1.0})
    bs = [f"b{i}" for i in range(9)]
    with pytest.raises(InstanceTooLarge):
        exact_assign(workload(0, [set(bs)]), {}, ledger(rs[:2]), "min", {b: 1 for b in bs})


def test_exact_leaves_ledger_untouched():
    rs = [region("r1", cpu=4.0)]
    lg = ledger(rs)
    exact_assign(workload(0, [{"b"}]), {("b", "r1"): 1.0}, lg, "sum", {"b": 1.0})
    assert lg.remaining_compute["r1"] == 4.0


def test_pruning_can_lose_optimum_when_capacity_binds():
    # b2's only surviving region is r1, which b1 needs more; the unpruned search
    # sends b2 to r2 instead
    rs = [region("r1", cpu=1.0), region("r2", cpu=1.0)]
    w = workload(0, [{"b1", "b2"}])
    util = grid(["b1", "b2"], ["r1", "r2"], [[5, 0], [6, 4]])
    demand = {"b1": 1.0, "b2": 1.0}
    cands = prune(w, util, ["r1", "r2"])
    full = exact_assign(w, util, ledger(rs), "min", demand)
    assert assignment_value(full, w, util, "min") == 4.0
    with pytest.raises(InfeasibleAssignment):
        exact_assign(w, util, ledger(rs), "min", demand, allowed=cands)


# -- baselines --------------------------------------------------------------


def test_lb_v_spreads_by_bandwidth_headroom():
    rs = [region("r1", bw=100.0), region("r2", bw=100.0)]
    w = workload(0, [{"a"}, {"b"}, {"c"}, {"d"}])
    bw = {"a": 10.0, "b": 10.0, "c": 10.0, "d": 10.0}
    views = {"a": 40, "b": 30, "c": 20, "d": 10}
    reach = {b: ["r1", "r2"] for b in bw}
    a = lb_v_assign(w, views, ledger(rs), reach, {b: 1.0 for b in bw}, bw)
    assert a.mapping == {"a": "r1", "b": "r2", "c": "r1", "d": "r2"}


def test_lb_v_most_viewed_first():
    rs = [region("r1", bw=100.0), region("r2", bw=50.0)]
    w = workload(0, [{"x"}, {"y"}])
    a = lb_v_assign(w, {"x": 1, "y": 100}, ledger(rs), {"x": ["r1", "r2"], "y": ["r1", "r2"]},
                    {"x": 1.0, "y": 1.0}, {"x": 60.0, "y": 60.0})
    # y goes first and takes r1; r1 then has 40 left, r2 50
    assert a.mapping == {"y": "r1", "x": "r2"}


def test_lb_c_heaviest_first_into_most_compute():
    rs = [region("r1", cpu=4.0), region("r2", cpu=3.0)]
    w = workload(0, [{"a"}, {"b"}, {"c"}])
    demand = {"a": 1.0, "b": 2.0, "c": 1.5}
    reach = {b: ["r1", "r2"] for b in demand}
    a = lb_c_assign(w, demand, ledger(rs), reach)
    assert a.mapping == {"b": "r1", "c": "r2", "a": "r1"}


def test_single_region_baselines_match_greedy():
    rs = [region("only", bw=1e4, cpu=10.0)]
    w = workload(0, [{"a", "b"}, {"c"}])
    demand = {"a": 1.0, "b": 2.0, "c": 0.5}
    util = {(b, "only"): 1.0 for b in demand}
    reach = {b: ["only"] for b in demand}
    g = greedy_assign(prune(w, util, ["only"]), ledger(rs), demand)
    assert lb_c_assign(w, demand, ledger(rs), reach).mapping == g.mapping
    assert lb_v_assign(w, {b: 1 for b in demand}, ledger(rs), reach, demand).mapping == g.mapping


# -- ledger -----------------------------------------------------------------


def test_ledger_budget_enforcement():
    c = region("c", kind="public_cloud", cpu=100.0, unit=2.0, p_cpu=1.0)
    lg = ledger([c], budget_compute=1.0, enforce_budget=True)
    assert lg.fits("c", 2.0)
    lg.commit("c", 2.0)
    assert lg.compute_cost == 1.0
    assert not lg.fits("c", 0.1)
    report_only = ledger([c], budget_compute=1.0)
    report_only.commit("c", 2.0)
    assert report_only.fits("c", 4.0)


def test_ledger_compute_boundary_is_inclusive():
    lg = ledger([region("r", cpu=1.0)])
    assert lg.fits("r", 1.0)
    lg.commit("r", 0.7)
    assert lg.fits("r", 0.3) and not lg.fits("r", 0.31)


def test_ratio_handles_free_regions():
    assert _ratio(2.0, 0.5) == 4.0
    assert _ratio(0.1, 0.0) == math.inf
    assert _ratio(0.0, 0.0) == 0.0
    assert _ratio(-1.0, 0.0) == -math.inf


def test_free_region_pairs_commit_first():
    # both free-region pairs outrank every priced pair; the higher utility commits first
    rs = [region("free", cpu=1.0), region("paid", kind="public_cloud", cpu=5.0, p_cpu=0.01)]
    w = workload(0, [{"b1", "b2"}])
    util = grid(["b1", "b2"], ["free", "paid"], [[1, 1], [50, 50]])
    a = greedy_assign(prune(w, util, ["free", "paid"]), ledger(rs), {"b1": 1.0, "b2": 1.0})
    assert a.mapping == {"b2": "free", "b1": "paid"}
