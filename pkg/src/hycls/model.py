"""Domain types and the latency / gain / utility / objective math.

Everything here is a pure function over immutable inputs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Mapping, Optional, Sequence, Tuple

import numpy as np

BroadcasterId = str
RegionId = str

NEG_INF = float("-inf")


class ConfigError(ValueError):
    """A required configuration entry (latency table key, region, ...) is missing or invalid."""


class GainDomainError(ValueError):
    """Raised when 1 - beta * L <= 0, i.e. the latency is outside the gain model."""


class RegionKind(str, enum.Enum):
    DEDICATED = "dedicated"
    PUBLIC_CLOUD = "public_cloud"


@dataclass(frozen=True)
class Version:
    label: str
    bitrate: int  # kbps

    def __post_init__(self):
        if self.bitrate <= 0:
            raise ValueError(f"version {self.label!r}: bitrate must be positive")


@dataclass(frozen=True, eq=False)
class ActivityMatrix:
    """Binary day x slot live indicator, ``d[i, j] == 1`` iff live in slot j of day i."""

    d: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.d)
        if arr.ndim != 2:
            raise ValueError("activity matrix must be two-dimensional (days x slots)")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("activity matrix entries must be 0 or 1")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "d", arr)

    @classmethod
    def empty(cls, days: int, slots_per_day: int) -> "ActivityMatrix":
        return cls(np.zeros((days, slots_per_day), dtype=np.uint8))

    @property
    def days(self) -> int:
        return self.d.shape[0]

    @property
    def slots_per_day(self) -> int:
        return self.d.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ActivityMatrix):
            return NotImplemented
        return self.d.shape == other.d.shape and bool((self.d == other.d).all())


@dataclass(frozen=True)
class BroadcasterProfile:
    id: BroadcasterId
    partner: bool
    source_bitrate: int  # kbps
    activity: ActivityMatrix
    viewer_dist: Mapping[Version, float]
    compute_demand: float  # compute units per slot

    def __post_init__(self):
        if self.source_bitrate <= 0:
            raise ValueError(f"{self.id}: source bitrate must be positive")
        if self.compute_demand <= 0:
            raise ValueError(f"{self.id}: compute demand must be positive")
        if any(n < 0 for n in self.viewer_dist.values()):
            raise ValueError(f"{self.id}: viewer counts must be non-negative")
        if not self.partner:
            keys = list(self.viewer_dist)
            if len(keys) != 1 or keys[0] != self.source_version:
                raise ValueError(
                    f"{self.id}: non-partner broadcasters carry exactly the source version"
                )

    @property
    def source_version(self) -> Version:
        return Version("source", self.source_bitrate)

    @property
    def ladder(self) -> Tuple[Version, ...]:
        return tuple(self.viewer_dist)

    @property
    def bandwidth_demand(self) -> float:
        """Ingest plus egress of every produced rendition, in Mbps."""
        return (self.source_bitrate + sum(v.bitrate for v in self.viewer_dist)) / 1000.0

    @property
    def total_viewers(self) -> float:
        return float(sum(self.viewer_dist.values()))


@dataclass(frozen=True)
class Region:
    id: RegionId
    kind: RegionKind
    bandwidth_cap: float  # Mbps
    compute_cap: float  # compute units
    instance_bandwidth: float  # Mbps per leased instance
    unit_compute: float  # compute units per leased instance
    price_bandwidth: float  # per instance-slot
    price_compute: float  # per instance-slot
    delivery_latency: Mapping[str, float] = field(default_factory=dict)  # version label -> s

    def __post_init__(self):
        for name in ("bandwidth_cap", "compute_cap", "instance_bandwidth", "unit_compute"):
            if getattr(self, name) <= 0:
                raise ValueError(f"region {self.id}: {name} must be positive")
        for name in ("price_bandwidth", "price_compute"):
            if getattr(self, name) < 0:
                raise ValueError(f"region {self.id}: {name} must be non-negative")

    @property
    def leased(self) -> bool:
        """Lease indicator: only public-cloud capacity is billed."""
        return self.kind is RegionKind.PUBLIC_CLOUD

    def delivery(self, v: Version) -> float:
        try:
            return self.delivery_latency[v.label]
        except KeyError:
            raise ConfigError(f"missing delivery latency for region={self.id!r} version={v.label!r}")


@dataclass(frozen=True)
class LatencyModel:
    """Link latencies keyed ``(broadcaster, region, slot)`` and a transcode table
    keyed ``(q_in, q_out, load_band)``.

    ``region_band`` maps ``(region, slot)`` to a load band; unknown pairs fall back
    to ``default_band``.
    """

    link: Mapping[Tuple[BroadcasterId, RegionId, int], float]
    transcode_table: Mapping[Tuple[int, int, str], float]
    region_band: Mapping[Tuple[RegionId, int], str] = field(default_factory=dict)
    default_band: str = "low"

    def link_latency(self, b: BroadcasterId, r: RegionId, t: int) -> float:
        try:
            return self.link[(b, r, t)]
        except KeyError:
            raise ConfigError(f"missing link latency for key {(b, r, t)!r}")

    def has_link(self, b: BroadcasterId, r: RegionId, t: int) -> bool:
        return (b, r, t) in self.link

    def band(self, r: RegionId, t: int) -> str:
        return self.region_band.get((r, t), self.default_band)

    def transcode(self, q_in: int, q_out: int, band: str) -> float:
        if q_in <= q_out:
            q_out = q_in
        key = (q_in, q_out, band)
        try:
            return self.transcode_table[key]
        except KeyError:
            raise ConfigError(f"missing transcode latency for key {key!r}")


@dataclass(frozen=True)
class GainParams:
    alpha: float = 1.0
    beta: float = 0.011

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def max_latency(self) -> float:
        """Smallest latency at which gain is undefined."""
        return 1.0 / self.beta


@dataclass(frozen=True)
class SlotWorkload:
    slot: int
    broadcasters: FrozenSet[BroadcasterId]
    events: Tuple[FrozenSet[BroadcasterId], ...]

    def __post_init__(self):
        seen: set = set()
        for e in self.events:
            if not e:
                raise ValueError(f"slot {self.slot}: empty event")
            if seen & e:
                raise ValueError(f"slot {self.slot}: events overlap on {sorted(seen & e)}")
            seen |= e
        if seen != set(self.broadcasters):
            raise ValueError(f"slot {self.slot}: events do not cover the live broadcasters")

    @classmethod
    def singletons(cls, slot: int, broadcasters: Sequence[BroadcasterId]) -> "SlotWorkload":
        return cls(slot, frozenset(broadcasters), tuple(frozenset([b]) for b in sorted(broadcasters)))

    def event_of(self) -> Dict[BroadcasterId, int]:
        return {b: i for i, e in enumerate(self.events) for b in e}


@dataclass(frozen=True)
class Assignment:
    """Broadcaster -> region for one slot, plus per-region demand tallies."""

    mapping: Mapping[BroadcasterId, RegionId]
    bandwidth: Mapping[RegionId, float]
    compute: Mapping[RegionId, float]
    overflow: FrozenSet[BroadcasterId] = frozenset()
    repaired: FrozenSet[BroadcasterId] = frozenset()

    @classmethod
    def build(
        cls,
        mapping: Mapping[BroadcasterId, RegionId],
        region_ids: Sequence[RegionId],
        compute_demand: Mapping[BroadcasterId, float],
        bandwidth_demand: Optional[Mapping[BroadcasterId, float]] = None,
        overflow=(),
        repaired=(),
    ) -> "Assignment":
        bw = {r: 0.0 for r in region_ids}
        cpu = {r: 0.0 for r in region_ids}
        # accumulate in a fixed broadcaster order so float sums are reproducible
        for b in sorted(mapping):
            r = mapping[b]
            cpu[r] += compute_demand[b]
            if bandwidth_demand is not None:
                bw[r] += bandwidth_demand[b]
        return cls(dict(mapping), bw, cpu, frozenset(overflow), frozenset(repaired))


def leased_instances(demand: float, unit: float) -> int:
    """Whole instances needed to carry ``demand``; guards against float fuzz at exact multiples."""
    if demand <= 0:
        return 0
    return math.ceil(round(demand / unit, 9))


def broadcast_latency(
    b: BroadcasterProfile,
    r: Region,
    v: Version,
    lm: LatencyModel,
    t: int,
    band: Optional[str] = None,
    extra: float = 0.0,
) -> float:
    """Link + transcode + delivery latency in seconds.

    Requests for a rendition at or above the source bitrate are charged the
    pass-through ``(q_b, q_b)`` transcode entry. ``extra`` is added to the link term.
    """
    if band is None:
        band = lm.band(r.id, t)
    link = lm.link_latency(b.id, r.id, t) + extra
    return link + lm.transcode(b.source_bitrate, v.bitrate, band) + r.delivery(v)


def gain(p: GainParams, latency: float) -> float:
    arg = 1.0 - p.beta * latency
    if arg <= 0:
        raise GainDomainError(f"latency {latency} s is outside the gain model (1 - beta*L = {arg})")
    return p.alpha + math.log(arg)


def version_gains(
    b: BroadcasterProfile,
    r: Region,
    lm: LatencyModel,
    p: GainParams,
    t: int,
    band: Optional[str] = None,
    extra: float = 0.0,
) -> Dict[Version, float]:
    """Gain per ladder rendition; raises GainDomainError if any is out of domain."""
    return {v: gain(p, broadcast_latency(b, r, v, lm, t, band, extra)) for v in b.viewer_dist}


def weighted_utility(gains: Mapping[Version, float], viewers: Mapping[Version, float]) -> float:
    return float(sum(gains[v] * n for v, n in viewers.items()))


def utility(
    b: BroadcasterProfile,
    r: Region,
    lm: LatencyModel,
    p: GainParams,
    t: int,
    band: Optional[str] = None,
) -> float:
    """Viewer-weighted gain summed over b's ladder; ``-inf`` when any rendition is infeasible."""
    try:
        gains = version_gains(b, r, lm, p, t, band)
    except GainDomainError:
        return NEG_INF
    return weighted_utility(gains, b.viewer_dist)


def objective(
    assign: Assignment,
    w: SlotWorkload,
    utilities: Mapping[Tuple[BroadcasterId, RegionId], float],
) -> Tuple[Dict[int, float], float]:
    """Per-event minimum utility (keyed by event index) and the minimum across events.

    Pairs absent from ``utilities`` count as ``-inf``. The global value is NaN for an
    empty slot.
    """
    missing = w.broadcasters - set(assign.mapping)
    if missing:
        raise ValueError(f"assignment does not cover {sorted(missing)}")
    per_event = {
        i: min(utilities.get((b, assign.mapping[b]), NEG_INF) for b in e)
        for i, e in enumerate(w.events)
    }
    overall = min(per_event.values()) if per_event else math.nan
    return per_event, overall

