"""Slot-by-slot simulation: offloading, threshold evolution, per-slot placement,
leasing cost, constraint checks and migration statistics.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import assign as A
from .config import LadderConfig, LatencyConfig, SimConfig
from .model import (
    NEG_INF,
    ActivityMatrix,
    Assignment,
    BroadcasterProfile,
    GainDomainError,
    GainParams,
    LatencyModel,
    Region,
    SlotWorkload,
    Version,
    leased_instances,
    objective,
    version_gains,
    weighted_utility,
)
from .stability import Placement, StabilityState, initial_offload, update_threshold
from .trace import StreamRecord, Trace, derive_events


class Strategy(str, enum.Enum):
    HYCLS = "hycls"
    LB_V = "lb-v"
    LB_C = "lb-c"


class SimulationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# cost and constraint accounting
# --------------------------------------------------------------------------


def lease_cost(
    bandwidth: Mapping[str, float], compute: Mapping[str, float], regions: Sequence[Region]
) -> Tuple[float, float]:
    """Whole-instance lease cost (bandwidth term, compute term) over public-cloud regions."""
    bw = cpu = 0.0
    for r in regions:
        if not r.leased:
            continue
        bw += leased_instances(bandwidth.get(r.id, 0.0), r.instance_bandwidth) * r.price_bandwidth
        cpu += leased_instances(compute.get(r.id, 0.0), r.unit_compute) * r.price_compute
    return bw, cpu


def check_constraints(
    bandwidth: Mapping[str, float],
    compute: Mapping[str, float],
    regions: Sequence[Region],
    budgets: Tuple[float, float] = (math.inf, math.inf),
) -> List[str]:
    """Capacity and budget overruns as ``kind:subject:value>limit`` strings."""
    out = []
    for r in regions:
        w, c = bandwidth.get(r.id, 0.0), compute.get(r.id, 0.0)
        if w > r.bandwidth_cap + A.EPS:
            out.append(f"bandwidth:{r.id}:{w:.6g}>{r.bandwidth_cap:.6g}")
        if c > r.compute_cap + A.EPS:
            out.append(f"compute:{r.id}:{c:.6g}>{r.compute_cap:.6g}")
    bw_cost, cpu_cost = lease_cost(bandwidth, compute, regions)
    if bw_cost > budgets[0] + A.EPS:
        out.append(f"budget_bandwidth:total:{bw_cost:.6g}>{budgets[0]:.6g}")
    if cpu_cost > budgets[1] + A.EPS:
        out.append(f"budget_compute:total:{cpu_cost:.6g}>{budgets[1]:.6g}")
    return out


def migration_count(prev: Mapping[str, str], cur: Mapping[str, str]) -> Tuple[int, int]:
    """(moved, continuing) over broadcasters present in both slots."""
    both = [b for b in cur if b in prev]
    return sum(1 for b in both if prev[b] != cur[b]), len(both)


# --------------------------------------------------------------------------
# synthetic latency model
# --------------------------------------------------------------------------


def _unit_hash(*parts) -> float:
    h = hashlib.blake2b(":".join(str(p) for p in parts).encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2.0 ** 64


class GeoLinkTable:
    """Link latency from the broadcaster's home zone to the region's zone, plus
    the region's ingest latency and a fixed per-pair jitter. Constant over slots.
    """

    slot_invariant = True

    def __init__(self, cfg: LatencyConfig, region_zone, region_ingest, seed: int = 0):
        self.cfg = cfg
        self.region_zone = dict(region_zone)
        self.region_ingest = dict(region_ingest)
        self.seed = seed
        zones = sorted(cfg.broadcaster_zones)
        weights = np.array([cfg.broadcaster_zones[z] for z in zones], dtype=float)
        self._zones = zones
        self._cum = np.cumsum(weights / weights.sum())
        self._home: Dict[str, str] = {}

    def home_zone(self, b: str) -> str:
        if b not in self._home:
            u = _unit_hash(self.seed, "zone", b)
            self._home[b] = self._zones[int(np.searchsorted(self._cum, u, side="right").clip(max=len(self._zones) - 1))]
        return self._home[b]

    def __contains__(self, key) -> bool:
        b, r, _t = key
        return r in self.region_zone

    def __getitem__(self, key) -> float:
        b, r, _t = key
        if r not in self.region_zone:
            raise KeyError(key)
        base = self.cfg.zone_link[self.home_zone(b)][self.region_zone[r]]
        return base + self.region_ingest[r] + self.cfg.link_jitter * _unit_hash(self.seed, "link", b, r)


def transcode_table(cfg: LatencyConfig, sources: Sequence[int], outputs: Sequence[int]) -> Dict:
    """(q_in, q_out, band) -> seconds for every q_out <= q_in; linear in both bitrates."""
    table = {}
    for band, factor in band_factors(cfg).items():
        for q_in in sources:
            for q_out in set(outputs) | {q_in}:
                if q_out > q_in:
                    continue
                sec = (
                    cfg.transcode_base
                    + cfg.transcode_per_mbps_in * q_in / 1000.0
                    + cfg.transcode_per_mbps_out * q_out / 1000.0
                )
                table[(q_in, q_out, band)] = sec * factor
    return table


def band_factors(cfg: LatencyConfig) -> Dict[str, float]:
    # bands are listed low to high; each one is 25% slower than the one below
    return {name: 1.25 ** i for i, (name, _) in enumerate(cfg.load_bands)}


def load_band(cfg: LatencyConfig, utilization: float) -> str:
    for name, upper in cfg.load_bands:
        if utilization < upper:
            return name
    return cfg.load_bands[-1][0]


# --------------------------------------------------------------------------
# broadcaster profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamShape:
    """Slot-independent part of a broadcaster's profile."""

    partner: bool
    source_bitrate: int
    shares: Tuple[Tuple[Version, float], ...]
    compute_demand: float


def stream_shape(partner: bool, bitrate: int, ladder: LadderConfig) -> StreamShape:
    source = Version("source", bitrate)
    if not partner:
        return StreamShape(False, bitrate, ((source, 1.0),), ladder.ingest_compute)
    rungs = [r for r in ladder.rungs if r.bitrate < bitrate]
    if not rungs:
        return StreamShape(True, bitrate, ((source, 1.0),), ladder.ingest_compute)
    # remaining audience split over lower rungs, weighted towards the higher ones
    weights = np.arange(1, len(rungs) + 1, dtype=float)
    rest = (1.0 - ladder.source_share) * weights / weights.sum()
    shares = [(source, ladder.source_share)] + [
        (Version(r.label, r.bitrate), float(s)) for r, s in zip(sorted(rungs, key=lambda r: r.bitrate), rest)
    ]
    compute = ladder.ingest_compute + sum(r.compute for r in rungs)
    return StreamShape(True, bitrate, tuple(shares), compute)


def history_window(full: ActivityMatrix, day: int, n: int) -> ActivityMatrix:
    """The ``n`` completed days before ``day``; days before the trace are idle."""
    rows = np.zeros((n, full.slots_per_day), dtype=np.uint8)
    for k in range(n):
        src = day - n + k
        if 0 <= src < full.days:
            rows[k] = full.d[src]
    return ActivityMatrix(rows)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class SlotReport:
    slot: int
    live: int
    continuing: int
    bandwidth: Dict[str, float]
    compute: Dict[str, float]
    bw_cost: float
    cpu_cost: float
    event_minima: Dict[int, float]
    objective_min: float
    migrations: int
    cloud_hosted: int
    H: float
    violations: List[str] = field(default_factory=list)
    overflow: int = 0
    repaired: int = 0
    fallback_events: int = 0
    mapping: Dict[str, str] = field(default_factory=dict, repr=False)

    @property
    def cost(self) -> float:
        return self.bw_cost + self.cpu_cost

    @property
    def migration_fraction(self) -> float:
        return self.migrations / self.continuing if self.continuing else 0.0


def _nan_to_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


@dataclass
class SimReport:
    strategy: Strategy
    regions: List[str]
    slots_per_day: int
    slots: List[SlotReport]
    baseline_daily_cost: Optional[List[float]] = None

    @property
    def days(self) -> int:
        return math.ceil(len(self.slots) / self.slots_per_day) if self.slots else 0

    def _by_day(self):
        for d in range(self.days):
            yield self.slots[d * self.slots_per_day:(d + 1) * self.slots_per_day]

    @property
    def total_cost(self) -> float:
        return math.fsum(s.cost for s in self.slots)

    @property
    def daily_cost(self) -> List[float]:
        return [math.fsum(s.cost for s in day) for day in self._by_day()]

    @property
    def daily_migration_fraction(self) -> List[float]:
        out = []
        for day in self._by_day():
            cont = sum(s.continuing for s in day)
            out.append(sum(s.migrations for s in day) / cont if cont else 0.0)
        return out

    @property
    def peak_migration_fraction(self) -> float:
        return max((s.migration_fraction for s in self.slots), default=0.0)

    @property
    def daily_cloud_fraction(self) -> List[float]:
        out = []
        for day in self._by_day():
            live = sum(s.live for s in day)
            out.append(sum(s.cloud_hosted for s in day) / live if live else 0.0)
        return out

    @property
    def peak_cloud_fraction(self) -> float:
        return max((s.cloud_hosted / s.live for s in self.slots if s.live), default=0.0)

    @staticmethod
    def _ratio(num: float, den: float) -> Optional[float]:
        if den > 0:
            return num / den
        return 1.0 if num == 0 else None

    @property
    def normalized_cost(self) -> Optional[float]:
        if self.baseline_daily_cost is None:
            return None
        # both sides summed from daily totals so LB-C over itself is exactly 1
        return self._ratio(math.fsum(self.daily_cost), math.fsum(self.baseline_daily_cost))

    @property
    def daily_normalized_cost(self) -> Optional[List[Optional[float]]]:
        if self.baseline_daily_cost is None:
            return None
        return [self._ratio(c, b) for c, b in zip(self.daily_cost, self.baseline_daily_cost)]

    def summary(self) -> dict:
        finite = [s.objective_min for s in self.slots if math.isfinite(s.objective_min)]
        return {
            "strategy": self.strategy.value,
            "slots": len(self.slots),
            "days": self.days,
            "total_cost": self.total_cost,
            "total_bandwidth_cost": math.fsum(s.bw_cost for s in self.slots),
            "total_compute_cost": math.fsum(s.cpu_cost for s in self.slots),
            "daily_cost": self.daily_cost,
            "normalized_cost": self.normalized_cost,
            "daily_normalized_cost": self.daily_normalized_cost,
            "daily_migration_fraction": self.daily_migration_fraction,
            "peak_migration_fraction": self.peak_migration_fraction,
            "daily_cloud_fraction": self.daily_cloud_fraction,
            "peak_cloud_fraction": self.peak_cloud_fraction,
            "mean_objective_min": math.fsum(finite) / len(finite) if finite else None,
            "violations": sum(len(s.violations) for s in self.slots),
            "compute_violations": sum(
                1 for s in self.slots for v in s.violations if v.startswith("compute:")
            ),
            "overflow_broadcasters": sum(s.overflow for s in self.slots),
            "repaired_broadcasters": sum(s.repaired for s in self.slots),
            "fallback_events": sum(s.fallback_events for s in self.slots),
        }


def _fmt(x: float) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return f"{x:.6f}"


def write_report(report: SimReport, out_dir, stem: Optional[str] = None) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or report.strategy.value
    csv_path, json_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
    header = (
        ["slot"]
        + [f"W_{r}" for r in report.regions]
        + [f"C_{r}" for r in report.regions]
        + ["bw_cost", "cpu_cost", "objective_min", "migrations", "violations",
           "live", "continuing", "cloud_hosted", "H"]
    )
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for s in report.slots:
            wr.writerow(
                [s.slot]
                + [_fmt(s.bandwidth[r]) for r in report.regions]
                + [_fmt(s.compute[r]) for r in report.regions]
                + [_fmt(s.bw_cost), _fmt(s.cpu_cost), _fmt(s.objective_min), s.migrations,
                   ";".join(s.violations), s.live, s.continuing, s.cloud_hosted, _fmt(s.H)]
            )
    summary = {k: _nan_to_none(v) for k, v in report.summary().items()}
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


# --------------------------------------------------------------------------
# the slot loop
# --------------------------------------------------------------------------


class Simulation:
    """Mutable per-run state; ``step`` is called once per slot, in order."""

    def __init__(
        self,
        config: SimConfig,
        regions: Sequence[Region],
        latency: LatencyModel,
        strategy: Optional[Strategy] = None,
    ):
        sim = config.simulation
        self.config = config
        self.regions = list(regions)
        self.region_ids = [r.id for r in self.regions]
        self.by_id = {r.id: r for r in self.regions}
        self.latency = latency
        self.strategy = Strategy(strategy or sim.strategy)
        self.gain = GainParams(sim.alpha, sim.beta)
        self.stability = StabilityState(
            H=sim.initial_threshold,
            trigger_utilization=sim.offload_trigger,
            normalization=sim.normalization,
            strict_idle_days=sim.strict_idle_days,
        )
        self.overflow_region = sim.overflow_region or next(
            (r.id for r in self.regions if not r.leased), None
        )
        self.prev_mapping: Dict[str, str] = {}
        self.prev_bandwidth = {r: 0.0 for r in self.region_ids}
        self.prev_compute = {r: 0.0 for r in self.region_ids}
        self.placement: Dict[str, Placement] = {}
        self._gains: Dict[tuple, Optional[Dict[Version, float]]] = {}
        self._cacheable = bool(getattr(latency.link, "slot_invariant", False))

    def dedicated_bw_utilization(self) -> float:
        cap = sum(r.bandwidth_cap for r in self.regions if not r.leased)
        used = sum(self.prev_bandwidth[r.id] for r in self.regions if not r.leased)
        return used / cap if cap > 0 else 0.0

    def _bands(self) -> Dict[str, str]:
        cfg = self.config.latency
        return {
            r.id: load_band(cfg, self.prev_compute[r.id] / r.compute_cap) for r in self.regions
        }

    def _gains_for(self, b: BroadcasterProfile, r: Region, t: int, band: str, extra: float):
        key = (b.id, r.id, band, extra, b.source_bitrate, b.ladder)
        if self._cacheable and key in self._gains:
            return self._gains[key]
        try:
            g = version_gains(b, r, self.latency, self.gain, t, band, extra)
        except GainDomainError:
            g = None
        if self._cacheable:
            self._gains[key] = g
        return g

    def utilities(self, w: SlotWorkload, profiles: Mapping[str, BroadcasterProfile]):
        """Finite utility of every (broadcaster, linked region) pair this slot."""
        bands = self._bands()
        penalty = self.config.simulation.migration_penalty
        util: Dict[Tuple[str, str], float] = {}
        for b in sorted(w.broadcasters):
            prof = profiles[b]
            prev = self.prev_mapping.get(b)
            for r in self.regions:
                if not self.latency.has_link(b, r.id, w.slot):
                    continue
                extra = penalty if (penalty and prev is not None and prev != r.id) else 0.0
                g = self._gains_for(prof, r, w.slot, bands[r.id], extra)
                if g is not None:
                    util[(b, r.id)] = weighted_utility(g, prof.viewer_dist)
        return util

    def pool(self, b: str) -> bool:
        """True when ``b`` belongs in the dedicated pool."""
        return self.placement.get(b, Placement.DEDICATED) is Placement.DEDICATED

    def _hycls(self, w, utilities, ledger, cpu, bw):
        # the offloading decision picks the pool; dedicated-pool broadcasters may
        # spill into the cloud only when no dedicated option has room
        in_pool = {(b, r) for (b, r) in utilities if self.by_id[r].leased != self.pool(b)}
        # a broadcaster with no linked region in its pool may use any region
        stranded = set(w.broadcasters) - {b for b, _ in in_pool}
        cands = A.prune(
            w, utilities, self.region_ids,
            reachable=lambda b, r: b in stranded or (b, r) in in_pool,
        )
        for b in cands.broadcasters:
            if self.pool(b) and b not in stranded:
                cands.reachable[b] = cands.reachable[b] + [
                    (r.id, utilities[(b, r.id)]) for r in self.regions
                    if r.leased and (b, r.id) in utilities
                ]
        assignment = A.greedy_assign(
            cands, ledger, cpu, bandwidth_demand=bw,
            overflow_region=self.overflow_region, slot=w.slot,
        )
        return assignment, len(cands.fallback_events)

    def step(self, w: SlotWorkload, profiles: Mapping[str, BroadcasterProfile]) -> SlotReport:
        sim = self.config.simulation
        live = sorted(w.broadcasters)

        # 1. initial offloading for arrivals
        util_bw = self.dedicated_bw_utilization()
        arrivals = [b for b in live if b not in self.prev_mapping]
        for b in arrivals:
            self.placement[b] = initial_offload(profiles[b], self.stability, util_bw)

        # 2. threshold from the SI of dedicated-hosted broadcasters
        dedicated = [
            b for b in live
            if (b in self.prev_mapping and not self.by_id[self.prev_mapping[b]].leased)
            or (b not in self.prev_mapping and self.placement[b] is Placement.DEDICATED)
        ]
        update_threshold(self.stability, [self.stability.si(profiles[b]) for b in dedicated])

        # 3. joint ingest + transcode placement
        utilities = self.utilities(w, profiles)
        ledger = A.CapacityLedger.fresh(
            self.regions, sim.budget_bandwidth, sim.budget_compute, sim.strict_budget
        )
        cpu = {b: profiles[b].compute_demand for b in live}
        bw = {b: profiles[b].bandwidth_demand for b in live}
        fallback = 0
        try:
            if self.strategy is Strategy.HYCLS:
                assignment, fallback = self._hycls(w, utilities, ledger, cpu, bw)
            else:
                # the baselines balance over every linked region, with no offloading pool
                reachable = {b: [] for b in live}
                for (b, r) in utilities:
                    reachable[b].append(r)
                if self.strategy is Strategy.LB_V:
                    viewers = {b: profiles[b].total_viewers for b in live}
                    assignment = A.lb_v_assign(
                        w, viewers, ledger, reachable, cpu, bw, self.overflow_region, w.slot
                    )
                else:
                    assignment = A.lb_c_assign(
                        w, cpu, ledger, reachable, bw, self.overflow_region, w.slot
                    )
        except A.InfeasibleAssignment as exc:
            exc.slot = w.slot
            raise

        # 4. accounting
        bw_cost, cpu_cost = lease_cost(assignment.bandwidth, assignment.compute, self.regions)
        violations = check_constraints(
            assignment.bandwidth, assignment.compute, self.regions,
            (sim.budget_bandwidth, sim.budget_compute),
        )
        if sim.strict and any(v.startswith("compute:") for v in violations):
            raise SimulationError(f"slot {w.slot}: compute capacity exceeded: {violations}")
        per_event, overall = objective(assignment, w, utilities)
        moved, continuing = migration_count(self.prev_mapping, assignment.mapping)
        cloud = sum(1 for b in live if self.by_id[assignment.mapping[b]].leased)

        report = SlotReport(
            slot=w.slot,
            live=len(live),
            continuing=continuing,
            bandwidth=dict(assignment.bandwidth),
            compute=dict(assignment.compute),
            bw_cost=bw_cost,
            cpu_cost=cpu_cost,
            event_minima=per_event,
            objective_min=overall,
            migrations=moved,
            cloud_hosted=cloud,
            H=self.stability.H,
            violations=violations,
            overflow=len(assignment.overflow),
            repaired=len(assignment.repaired),
            fallback_events=fallback,
            mapping=dict(assignment.mapping),
        )
        for b in list(self.placement):
            if b not in w.broadcasters:
                del self.placement[b]
        self.prev_mapping = dict(assignment.mapping)
        self.prev_bandwidth = dict(assignment.bandwidth)
        self.prev_compute = dict(assignment.compute)
        return report


def build_latency_model(config: SimConfig, bitrates: Sequence[int]) -> LatencyModel:
    lat = config.latency
    link = GeoLinkTable(
        lat,
        {r.id: r.zone for r in config.regions},
        {r.id: r.ingest_latency for r in config.regions},
        seed=config.simulation.seed,
    )
    outputs = [r.bitrate for r in config.ladder.rungs]
    table = transcode_table(lat, sorted(set(bitrates)), outputs)
    return LatencyModel(link=link, transcode_table=table, default_band=lat.load_bands[0][0])


class TraceDriver:
    """Turns a trace into per-slot workloads and broadcaster profiles."""

    def __init__(self, trace: Trace, config: SimConfig):
        self.trace = trace
        self.config = config
        self.m = trace.slots_per_day
        self.activity = trace.activity()
        self.live = trace.by_slot()
        self._history: Dict[Tuple[str, int], ActivityMatrix] = {}
        self._shapes: Dict[str, StreamShape] = {}

    def shape(self, rec: StreamRecord) -> StreamShape:
        key = (rec.partner, rec.bitrate_kbps)
        if key not in self._shapes:
            self._shapes[key] = stream_shape(rec.partner, rec.bitrate_kbps, self.config.ladder)
        return self._shapes[key]

    def history(self, b: str, day: int) -> ActivityMatrix:
        key = (b, day)
        if key not in self._history:
            self._history[key] = history_window(
                self.activity[b], day, self.config.simulation.history_days
            )
        return self._history[key]

    def slot(self, t: int) -> Tuple[SlotWorkload, Dict[str, BroadcasterProfile]]:
        recs = self.live[t]
        day = t // self.m
        profiles = {}
        for rec in recs:
            shape = self.shape(rec)
            n = rec.viewers_at(t)
            profiles[rec.broadcaster_id] = BroadcasterProfile(
                id=rec.broadcaster_id,
                partner=shape.partner,
                source_bitrate=shape.source_bitrate,
                activity=self.history(rec.broadcaster_id, day),
                viewer_dist={v: n * s for v, s in shape.shares},
                compute_demand=shape.compute_demand,
            )
        return derive_events(t, recs), profiles


def run(
    config: SimConfig,
    trace: Trace,
    strategy: Optional[Strategy] = None,
    baseline: Optional[SimReport] = None,
    normalize: bool = True,
) -> SimReport:
    """Simulate every slot of ``trace``.

    The report is normalized against ``baseline`` (an LB-C run). When no baseline
    is given and ``normalize`` is set, a non-LB-C run computes its own LB-C baseline.
    """
    strategy = Strategy(strategy or config.simulation.strategy)
    regions = config.build_regions()
    bitrates = {r.bitrate_kbps for r in trace.records}
    sim = Simulation(config, regions, build_latency_model(config, sorted(bitrates)), strategy)
    driver = TraceDriver(trace, config)
    slots = []
    day = -1
    for t in range(trace.num_slots):
        if t // trace.slots_per_day != day:
            day = t // trace.slots_per_day
            sim.stability.si_cache.clear()
        w, profiles = driver.slot(t)
        try:
            slots.append(sim.step(w, profiles))
        except (A.InfeasibleAssignment, SimulationError) as exc:
            # keep what was simulated so callers can still write it out
            exc.partial = SimReport(strategy, [r.id for r in regions], trace.slots_per_day, slots)
            raise
    report = SimReport(strategy, [r.id for r in regions], trace.slots_per_day, slots)
    if strategy is Strategy.LB_C:
        report.baseline_daily_cost = report.daily_cost
    elif baseline is not None:
        report.baseline_daily_cost = baseline.daily_cost
    elif normalize:
        report.baseline_daily_cost = run(config, trace, Strategy.LB_C, normalize=False).daily_cost
    return report
