"""Per-slot placement: max-min pruning + greedy commit, an exhaustive oracle,
and the view-based / compute-based load-balancing baselines.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

from .model import (
    NEG_INF,
    Assignment,
    BroadcasterId,
    Region,
    RegionId,
    SlotWorkload,
    leased_instances,
)

Utilities = Mapping[Tuple[BroadcasterId, RegionId], float]

# slack for float drift when comparing demand against remaining capacity
EPS = 1e-9


class Aggregation(str, enum.Enum):
    SUM_OF_MINS = "sum"
    MIN_OF_MINS = "min"


class InfeasibleAssignment(RuntimeError):
    def __init__(self, unplaced: Sequence[BroadcasterId], slot: Optional[int] = None):
        self.unplaced = list(unplaced)
        self.slot = slot
        where = f" at slot {slot}" if slot is not None else ""
        super().__init__(f"no capacity left for {self.unplaced}{where}")


class InstanceTooLarge(ValueError):
    pass


@dataclass
class CandidateSet:
    """Surviving (region, utility) options per broadcaster, best first.

    ``reachable`` keeps every finite option (pre-pruning) so the greedy can
    repair broadcasters whose pruned options are all full.
    """

    regions: Tuple[RegionId, ...]
    candidates: Dict[BroadcasterId, List[Tuple[RegionId, float]]]
    reachable: Dict[BroadcasterId, List[Tuple[RegionId, float]]]
    bounds: Dict[int, float]
    fallback_events: FrozenSet[int] = frozenset()

    @property
    def broadcasters(self) -> List[BroadcasterId]:
        return sorted(self.reachable)

    def pairs(self) -> Dict[Tuple[BroadcasterId, RegionId], float]:
        return {(b, r): u for b, opts in self.candidates.items() for r, u in opts}


@dataclass
class CapacityLedger:
    """Remaining compute per region plus running lease cost.

    Bandwidth is tracked but not enforced, so ``remaining_bandwidth`` may go
    negative; compute never does.
    """

    regions: Dict[RegionId, Region]
    remaining_compute: Dict[RegionId, float]
    used_bandwidth: Dict[RegionId, float]
    used_compute: Dict[RegionId, float]
    budget_bandwidth: float = math.inf
    budget_compute: float = math.inf
    enforce_budget: bool = False
    bandwidth_cost: float = 0.0
    compute_cost: float = 0.0

    @classmethod
    def fresh(
        cls,
        regions: Sequence[Region],
        budget_bandwidth: float = math.inf,
        budget_compute: float = math.inf,
        enforce_budget: bool = False,
    ) -> "CapacityLedger":
        return cls(
            regions={r.id: r for r in regions},
            remaining_compute={r.id: float(r.compute_cap) for r in regions},
            used_bandwidth={r.id: 0.0 for r in regions},
            used_compute={r.id: 0.0 for r in regions},
            budget_bandwidth=budget_bandwidth,
            budget_compute=budget_compute,
            enforce_budget=enforce_budget,
        )

    def remaining_bandwidth(self, r: RegionId) -> float:
        return self.regions[r].bandwidth_cap - self.used_bandwidth[r]

    def _cost_delta(self, r: RegionId, c: float, w: float) -> Tuple[float, float]:
        reg = self.regions[r]
        if not reg.leased:
            return 0.0, 0.0
        bw_before = leased_instances(self.used_bandwidth[r], reg.instance_bandwidth)
        bw_after = leased_instances(self.used_bandwidth[r] + w, reg.instance_bandwidth)
        cpu_before = leased_instances(self.used_compute[r], reg.unit_compute)
        cpu_after = leased_instances(self.used_compute[r] + c, reg.unit_compute)
        return (
            (bw_after - bw_before) * reg.price_bandwidth,
            (cpu_after - cpu_before) * reg.price_compute,
        )

    def fits(self, r: RegionId, c: float, w: float = 0.0) -> bool:
        if self.remaining_compute[r] - c < -EPS:
            return False
        if self.enforce_budget:
            dbw, dcpu = self._cost_delta(r, c, w)
            if self.bandwidth_cost + dbw > self.budget_bandwidth + EPS:
                return False
            if self.compute_cost + dcpu > self.budget_compute + EPS:
                return False
        return True

    def commit(self, r: RegionId, c: float, w: float = 0.0) -> None:
        dbw, dcpu = self._cost_delta(r, c, w)
        self.bandwidth_cost += dbw
        self.compute_cost += dcpu
        self.remaining_compute[r] = max(self.remaining_compute[r] - c, 0.0)
        self.used_compute[r] += c
        self.used_bandwidth[r] += w


def _finite_options(
    b: BroadcasterId,
    regions: Sequence[RegionId],
    utilities: Utilities,
    reachable: Callable[[BroadcasterId, RegionId], bool],
) -> List[Tuple[RegionId, float]]:
    opts = []
    for r in regions:
        u = utilities.get((b, r), NEG_INF)
        if u > NEG_INF and reachable(b, r):
            opts.append((r, u))
    pos = {r: i for i, r in enumerate(regions)}
    opts.sort(key=lambda o: (-o[1], pos[o[0]]))
    return opts


def prune(
    w: SlotWorkload,
    utilities: Utilities,
    regions: Sequence[RegionId],
    reachable: Optional[Callable[[BroadcasterId, RegionId], bool]] = None,
) -> CandidateSet:
    """Drop every option whose utility falls below its event's max-min bound.

    The bound of an event is the best, over regions usable by all members, of the
    worst member utility there. If no region is usable by every member, the bound
    becomes the worst member's best utility, which still leaves each member its
    top option; such events are listed in ``fallback_events``.
    """
    if reachable is None:
        reachable = lambda b, r: True  # noqa: E731
    regions = tuple(regions)
    options = {b: _finite_options(b, regions, utilities, reachable) for b in sorted(w.broadcasters)}
    candidates: Dict[BroadcasterId, List[Tuple[RegionId, float]]] = {}
    bounds: Dict[int, float] = {}
    fallback = set()
    for i, e in enumerate(w.events):
        per_member = [dict(options[b]) for b in e]
        shared = [r for r in regions if all(r in m for m in per_member)]
        if shared:
            bound = max(min(m[r] for m in per_member) for r in shared)
        else:
            fallback.add(i)
            bound = min((max(m.values()) for m in per_member if m), default=NEG_INF)
        bounds[i] = bound
        for b in e:
            candidates[b] = [(r, u) for r, u in options[b] if u >= bound]
    return CandidateSet(regions, candidates, options, bounds, frozenset(fallback))


def _ratio(u: float, cost: float) -> float:
    if cost > 0:
        return u / cost
    if u > 0:
        return math.inf
    return -math.inf if u < 0 else 0.0


def greedy_assign(
    cands: CandidateSet,
    ledger: CapacityLedger,
    compute_demand: Mapping[BroadcasterId, float],
    costs: Optional[Mapping[RegionId, float]] = None,
    bandwidth_demand: Optional[Mapping[BroadcasterId, float]] = None,
    overflow_region: Optional[RegionId] = None,
    slot: Optional[int] = None,
) -> Assignment:
    """Commit broadcasters in descending utility-per-compute-price order.

    The first time a broadcaster's pair comes up, its surviving regions are tried
    best-utility first (ties: cheaper, then roster order) and it takes the first
    one with room. If none has room, its pruned-away reachable regions are tried
    the same way (``repaired``); leftovers go to ``overflow_region`` at the end
    (``overflow``). Mutates ``ledger``.
    """
    if costs is None:
        costs = {r: reg.price_compute for r, reg in ledger.regions.items()}
    pos = {r: i for i, r in enumerate(cands.regions)}
    order = {b: i for i, b in enumerate(cands.broadcasters)}
    bw = bandwidth_demand or {}

    def pref(opt):
        r, u = opt
        return (-u, costs[r], pos[r])

    pairs = [(b, r, u) for b, opts in cands.candidates.items() for r, u in opts]
    pairs.sort(key=lambda p: (-_ratio(p[2], costs[p[1]]), -p[2], order[p[0]], pos[p[1]]))

    mapping: Dict[BroadcasterId, RegionId] = {}
    tried = set()
    repaired = []
    for b, _, _ in pairs:
        if b in tried:
            continue
        tried.add(b)
        c, wb = compute_demand[b], bw.get(b, 0.0)
        for r, _ in sorted(cands.candidates[b], key=pref):
            if ledger.fits(r, c, wb):
                ledger.commit(r, c, wb)
                mapping[b] = r
                break
        else:
            kept = {r for r, _ in cands.candidates[b]}
            rest = [o for o in cands.reachable[b] if o[0] not in kept]
            for r, _ in sorted(rest, key=pref):
                if ledger.fits(r, c, wb):
                    ledger.commit(r, c, wb)
                    mapping[b] = r
                    repaired.append(b)
                    break

    overflow = _place_overflow(
        [b for b in cands.broadcasters if b not in mapping],
        mapping, ledger, compute_demand, bw, overflow_region, slot,
    )
    return Assignment.build(
        mapping, cands.regions, compute_demand, bandwidth_demand, overflow, repaired
    )


def _place_overflow(unplaced, mapping, ledger, compute_demand, bw, overflow_region, slot):
    stuck = []
    for b in unplaced:
        c, wb = compute_demand[b], bw.get(b, 0.0)
        if overflow_region is not None and ledger.fits(overflow_region, c, wb):
            ledger.commit(overflow_region, c, wb)
            mapping[b] = overflow_region
        else:
            stuck.append(b)
    if stuck:
        raise InfeasibleAssignment(stuck, slot)
    return unplaced


def aggregate(minima: Sequence[float], aggregation: Aggregation) -> float:
    if not minima:
        return 0.0
    if Aggregation(aggregation) is Aggregation.SUM_OF_MINS:
        return math.fsum(minima)
    return min(minima)


def assignment_value(
    assign: Assignment, w: SlotWorkload, utilities: Utilities, aggregation: Aggregation
) -> float:
    minima = [min(utilities.get((b, assign.mapping[b]), NEG_INF) for b in e) for e in w.events]
    return aggregate(minima, aggregation)


def exact_assign(
    w: SlotWorkload,
    utilities: Utilities,
    ledger: CapacityLedger,
    aggregation: Aggregation,
    compute_demand: Mapping[BroadcasterId, float],
    costs: Optional[Mapping[RegionId, float]] = None,
    bandwidth_demand: Optional[Mapping[BroadcasterId, float]] = None,
    allowed: Optional[CandidateSet] = None,
    max_broadcasters: int = 8,
    max_regions: int = 4,
) -> Assignment:
    """Exhaustive search over every compute-feasible assignment.

    Among optimal assignments the winner is the lexicographically smallest when
    each broadcaster's choice is ranked (higher utility, cheaper, roster order),
    broadcasters taken in sorted id order. With ``allowed`` the search is limited
    to that candidate set. Does not touch ``ledger``.
    """
    regions = tuple(ledger.regions)
    bs = sorted(w.broadcasters)
    if len(bs) > max_broadcasters or len(regions) > max_regions:
        raise InstanceTooLarge(
            f"{len(bs)} broadcasters x {len(regions)} regions exceeds "
            f"{max_broadcasters} x {max_regions}"
        )
    if costs is None:
        costs = {r: reg.price_compute for r, reg in ledger.regions.items()}
    pos = {r: i for i, r in enumerate(regions)}
    choices = []
    for b in bs:
        if allowed is not None:
            opts = list(allowed.candidates.get(b, []))
        else:
            opts = [(r, utilities.get((b, r), NEG_INF)) for r in regions]
            opts = [o for o in opts if o[1] > NEG_INF]
        opts.sort(key=lambda o: (-o[1], costs[o[0]], pos[o[0]]))
        if not opts:
            raise InfeasibleAssignment([b])
        choices.append(opts)

    index = {b: i for i, b in enumerate(bs)}
    events = [[index[b] for b in e] for e in w.events]
    caps = [ledger.remaining_compute[r] + EPS for r in regions]
    demand = [compute_demand[b] for b in bs]
    agg = Aggregation(aggregation)

    best_value, best = None, None
    # product() walks choices in preference order, so the first optimum seen wins ties
    for combo in itertools.product(*choices):
        load = [0.0] * len(regions)
        ok = True
        for i, (r, _) in enumerate(combo):
            k = pos[r]
            load[k] += demand[i]
            if load[k] > caps[k]:
                ok = False
                break
        if not ok:
            continue
        minima = [min(combo[i][1] for i in ev) for ev in events]
        value = aggregate(minima, agg)
        if best_value is None or value > best_value:
            best_value, best = value, combo
    if best is None:
        raise InfeasibleAssignment(bs)
    mapping = {b: best[i][0] for i, b in enumerate(bs)}
    return Assignment.build(mapping, regions, compute_demand, bandwidth_demand)


def _balance(
    order: Sequence[BroadcasterId],
    reachable: Mapping[BroadcasterId, Sequence[RegionId]],
    ledger: CapacityLedger,
    headroom: Callable[[RegionId], float],
    compute_demand: Mapping[BroadcasterId, float],
    bandwidth_demand: Optional[Mapping[BroadcasterId, float]],
    overflow_region: Optional[RegionId],
    slot: Optional[int],
) -> Assignment:
    regions = tuple(ledger.regions)
    pos = {r: i for i, r in enumerate(regions)}
    bw = bandwidth_demand or {}
    mapping: Dict[BroadcasterId, RegionId] = {}
    for b in order:
        c, wb = compute_demand[b], bw.get(b, 0.0)
        for r in sorted(reachable.get(b, ()), key=lambda r: (-headroom(r), pos[r])):
            if ledger.fits(r, c, wb):
                ledger.commit(r, c, wb)
                mapping[b] = r
                break
    overflow = _place_overflow(
        [b for b in order if b not in mapping],
        mapping, ledger, compute_demand, bw, overflow_region, slot,
    )
    return Assignment.build(mapping, regions, compute_demand, bandwidth_demand, overflow)


def lb_v_assign(
    w: SlotWorkload,
    viewer_counts: Mapping[BroadcasterId, float],
    ledger: CapacityLedger,
    reachable: Mapping[BroadcasterId, Sequence[RegionId]],
    compute_demand: Mapping[BroadcasterId, float],
    bandwidth_demand: Optional[Mapping[BroadcasterId, float]] = None,
    overflow_region: Optional[RegionId] = None,
    slot: Optional[int] = None,
) -> Assignment:
    """Most-viewed first, each into the reachable region with the most spare bandwidth."""
    order = sorted(w.broadcasters, key=lambda b: (-viewer_counts.get(b, 0.0), b))
    return _balance(
        order, reachable, ledger, ledger.remaining_bandwidth,
        compute_demand, bandwidth_demand, overflow_region, slot,
    )


def lb_c_assign(
    w: SlotWorkload,
    compute_demand: Mapping[BroadcasterId, float],
    ledger: CapacityLedger,
    reachable: Mapping[BroadcasterId, Sequence[RegionId]],
    bandwidth_demand: Optional[Mapping[BroadcasterId, float]] = None,
    overflow_region: Optional[RegionId] = None,
    slot: Optional[int] = None,
) -> Assignment:
    """Heaviest transcoding load first, each into the region with the most spare compute."""
    order = sorted(w.broadcasters, key=lambda b: (-compute_demand[b], b))
    return _balance(
        order, reachable, ledger, ledger.remaining_compute.__getitem__,
        compute_demand, bandwidth_demand, overflow_region, slot,
    )
