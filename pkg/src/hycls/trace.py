"""Stream traces: the JSON-lines format, validation, activity matrices, events,
and a synthetic generator calibrated to crowdsourced-live-streaming statistics.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .model import ActivityMatrix, SlotWorkload


SCHEMA = "hycls-trace/1"
RECORD_FIELDS = (
    "broadcaster_id",
    "start_slot",
    "duration_slots",
    "event_key",
    "viewers",
    "bitrate_kbps",
    "partner",
)


class TraceError(ValueError):
    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class StreamRecord:
    broadcaster_id: str
    start_slot: int
    duration_slots: int
    event_key: str
    viewers: Tuple[int, ...]
    bitrate_kbps: int
    partner: bool

    def __post_init__(self):
        if self.duration_slots < 1:
            raise ValueError("duration_slots must be >= 1")
        if len(self.viewers) != self.duration_slots:
            raise ValueError("viewers length must equal duration_slots")
        if any(v < 0 for v in self.viewers):
            raise ValueError("viewer counts must be non-negative")
        if self.start_slot < 0:
            raise ValueError("start_slot must be non-negative")
        if self.bitrate_kbps <= 0:
            raise ValueError("bitrate_kbps must be positive")

    @property
    def end_slot(self) -> int:
        """Exclusive end."""
        return self.start_slot + self.duration_slots

    @property
    def peak(self) -> int:
        return max(self.viewers)

    def viewers_at(self, t: int) -> int:
        return self.viewers[t - self.start_slot]

    def to_json(self) -> str:
        return json.dumps(
            {
                "broadcaster_id": self.broadcaster_id,
                "start_slot": self.start_slot,
                "duration_slots": self.duration_slots,
                "event_key": self.event_key,
                "viewers": list(self.viewers),
                "bitrate_kbps": self.bitrate_kbps,
                "partner": self.partner,
            },
            separators=(",", ":"),
        )


@dataclass
class Trace:
    records: List[StreamRecord]
    slots_per_day: int = 288
    diagnostics: List[str] = field(default_factory=list)

    @property
    def broadcasters(self) -> List[str]:
        return sorted({r.broadcaster_id for r in self.records})

    @property
    def num_slots(self) -> int:
        return max((r.end_slot for r in self.records), default=0)

    @property
    def num_days(self) -> int:
        return math.ceil(self.num_slots / self.slots_per_day) if self.records else 0

    def by_slot(self) -> List[List[StreamRecord]]:
        """Records live in each slot, in (broadcaster, start) order."""
        live: List[List[StreamRecord]] = [[] for _ in range(self.num_slots)]
        for rec in sorted(self.records, key=lambda r: (r.broadcaster_id, r.start_slot)):
            for t in range(rec.start_slot, rec.end_slot):
                live[t].append(rec)
        return live

    def activity(self) -> Dict[str, ActivityMatrix]:
        return activity_matrices(self.records, self.slots_per_day, self.num_days)


def _check_record(obj) -> StreamRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    keys = set(obj)
    missing = [k for k in RECORD_FIELDS if k not in keys]
    extra = sorted(keys - set(RECORD_FIELDS))
    if missing:
        raise ValueError(f"missing fields {missing}")
    if extra:
        raise ValueError(f"unexpected fields {extra}")

    def want_int(name):
        v = obj[name]
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValueError(f"{name} must be an integer")
        return v

    if not isinstance(obj["broadcaster_id"], str) or not obj["broadcaster_id"]:
        raise ValueError("broadcaster_id must be a non-empty string")
    if not isinstance(obj["event_key"], str):
        raise ValueError("event_key must be a string")
    if not isinstance(obj["partner"], bool):
        raise ValueError("partner must be a boolean")
    viewers = obj["viewers"]
    if not isinstance(viewers, list) or any(
        not isinstance(v, int) or isinstance(v, bool) for v in viewers
    ):
        raise ValueError("viewers must be an array of integers")
    return StreamRecord(
        broadcaster_id=obj["broadcaster_id"],
        start_slot=want_int("start_slot"),
        duration_slots=want_int("duration_slots"),
        event_key=obj["event_key"],
        viewers=tuple(viewers),
        bitrate_kbps=want_int("bitrate_kbps"),
        partner=obj["partner"],
    )


def parse_trace(
    lines: Iterable[str], slots_per_day: int = 288, max_bad_fraction: float = 0.01
) -> Trace:
    """Validate JSON-lines trace text.

    Bad record lines are skipped and reported in ``diagnostics`` as
    ``line N: reason``; a wrong/missing header or more than ``max_bad_fraction``
    bad lines raises TraceError. Overlapping sessions of one broadcaster count as
    bad lines too.
    """
    lines = [ln for ln in lines]
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not numbered:
        return Trace([], slots_per_day)
    first_no, first = numbered[0]
    try:
        header = json.loads(first)
    except json.JSONDecodeError:
        header = None
    if header != {"schema": SCHEMA}:
        raise TraceError(
            f"line {first_no}: expected schema header {{\"schema\":\"{SCHEMA}\"}}",
            [f"line {first_no}: bad schema header"],
        )
    records: List[StreamRecord] = []
    diagnostics: List[str] = []
    busy: Dict[str, List[Tuple[int, int]]] = defaultdict(list)
    for no, ln in numbered[1:]:
        try:
            rec = _check_record(json.loads(ln))
        except json.JSONDecodeError as exc:
            diagnostics.append(f"line {no}: invalid JSON ({exc.msg})")
            continue
        except ValueError as exc:
            diagnostics.append(f"line {no}: {exc}")
            continue
        spans = busy[rec.broadcaster_id]
        if any(s < rec.end_slot and rec.start_slot < e for s, e in spans):
            diagnostics.append(f"line {no}: overlaps another session of {rec.broadcaster_id}")
            continue
        spans.append((rec.start_slot, rec.end_slot))
        records.append(rec)
    total = len(numbered) - 1
    if total and len(diagnostics) / total > max_bad_fraction:
        raise TraceError(
            f"{len(diagnostics)} of {total} records malformed (limit {max_bad_fraction:.1%})",
            diagnostics,
        )
    return Trace(records, slots_per_day, diagnostics)


def load_trace(path, slots_per_day: int = 288, max_bad_fraction: float = 0.01) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read().splitlines(), slots_per_day, max_bad_fraction)


def dump_trace(records: Iterable[StreamRecord], path) -> None:
    ordered = sorted(records, key=lambda r: (r.start_slot, r.broadcaster_id))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"schema": SCHEMA}, separators=(",", ":")) + "\n")
        for rec in ordered:
            fh.write(rec.to_json() + "\n")


def activity_matrices(
    records: Iterable[StreamRecord], slots_per_day: int, days: Optional[int] = None
) -> Dict[str, ActivityMatrix]:
    records = list(records)
    if days is None:
        days = math.ceil(max((r.end_slot for r in records), default=0) / slots_per_day)
    grids: Dict[str, np.ndarray] = {}
    for rec in records:
        g = grids.setdefault(rec.broadcaster_id, np.zeros(days * slots_per_day, dtype=np.uint8))
        g[rec.start_slot:rec.end_slot] = 1
    return {b: ActivityMatrix(g.reshape(days, slots_per_day)) for b, g in sorted(grids.items())}


def derive_events(slot: int, live: Sequence[StreamRecord]) -> SlotWorkload:
    """Group live streams sharing a non-empty event key; everyone else is a singleton."""
    groups: Dict[str, set] = defaultdict(set)
    singles = []
    for rec in live:
        if rec.event_key:
            groups[rec.event_key].add(rec.broadcaster_id)
        else:
            singles.append(rec.broadcaster_id)
    events = [frozenset(groups[k]) for k in sorted(groups)]
    events += [frozenset([b]) for b in sorted(singles)]
    return SlotWorkload(slot, frozenset(r.broadcaster_id for r in live), tuple(events))


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------


class GeneratorParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    broadcasters: int = Field(2000, gt=0)
    days: int = Field(3, gt=0)
    slots_per_day: int = Field(288, gt=0)
    slot_minutes: int = Field(5, gt=0)
    seed: int = 0

    # popularity: None means solve the exponent from top_share_target
    zipf_exponent: Optional[float] = Field(None, gt=0)
    popular_threshold: int = Field(8, gt=0)
    unpopular_fraction_target: float = Field(0.90, gt=0, lt=1)
    top_fraction: float = Field(0.03, gt=0, lt=1)
    top_share_target: float = Field(0.80, gt=0, lt=1)
    session_peak_floor: float = Field(0.5, ge=0, le=1)

    # arrivals per slot at the reference population, scaled linearly to ``broadcasters``
    reference_population: int = Field(1_500_000, gt=0)
    unpopular_arrivals: Tuple[float, float] = (400.0, 1800.0)
    peak_window_hours: Tuple[float, float] = (9.0, 13.0)

    # durations (minutes)
    unpopular_duration_anchor_min: float = Field(83.0, gt=0)
    unpopular_duration_anchor_quantile: float = Field(0.80, gt=0, lt=1)
    unpopular_duration_sigma: float = Field(1.0, gt=0)
    popular_duration_median_min: float = Field(150.0, gt=0)
    popular_duration_sigma: float = Field(0.5, gt=0)

    # popular schedules
    regular_fraction: float = Field(0.30, ge=0, le=1)
    regular_daily_prob: float = Field(0.85, ge=0, le=1)
    irregular_daily_prob: float = Field(0.10, ge=0, le=1)
    start_jitter_slots: int = Field(2, ge=0)

    # crowdsourced events
    events_per_day: float = Field(6.0, ge=0)
    max_concurrent_events: int = Field(12, ge=0)
    event_size: Tuple[int, int] = (2, 8)
    event_duration_slots: Tuple[int, int] = (12, 48)
    event_popular_bias: float = Field(0.8, ge=0, le=1)

    # stream properties
    partner_fraction_popular: float = Field(0.6, ge=0, le=1)
    partner_fraction_unpopular: float = Field(0.05, ge=0, le=1)
    bitrates_kbps: Tuple[int, ...] = (1500, 2500, 3500, 6000)
    bitrate_weights: Tuple[float, ...] = (0.3, 0.35, 0.25, 0.1)

    @model_validator(mode="after")
    def _check(self):
        if len(self.bitrates_kbps) != len(self.bitrate_weights) or not self.bitrates_kbps:
            raise ValueError("bitrates_kbps and bitrate_weights must be non-empty and equal length")
        if any(b <= 0 for b in self.bitrates_kbps) or any(w < 0 for w in self.bitrate_weights):
            raise ValueError("bitrates must be positive and weights non-negative")
        if sum(self.bitrate_weights) <= 0:
            raise ValueError("bitrate_weights must not all be zero")
        lo, hi = self.unpopular_arrivals
        if not 0 <= lo <= hi:
            raise ValueError("unpopular_arrivals must satisfy 0 <= low <= high")
        if not 1 <= self.event_size[0] <= self.event_size[1]:
            raise ValueError("event_size must satisfy 1 <= low <= high")
        if not 1 <= self.event_duration_slots[0] <= self.event_duration_slots[1]:
            raise ValueError("event_duration_slots must satisfy 1 <= low <= high")
        a, b = self.peak_window_hours
        if not 0 <= a < b <= 24:
            raise ValueError("peak_window_hours must satisfy 0 <= start < end <= 24")
        return self

    @property
    def scale(self) -> float:
        return self.broadcasters / self.reference_population

    def slot_length_ok(self) -> bool:
        return self.slots_per_day * self.slot_minutes == 24 * 60


def _poisson_below(lam: np.ndarray, k: int) -> np.ndarray:
    """P(Poisson(lam) < k), vectorized."""
    term = np.exp(-lam)
    total = term.copy()
    for i in range(1, k):
        term = term * lam / i
        total += term
    return total


def _bisect(f, lo, hi, iters=80):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def zipf_means(p: GeneratorParams) -> Tuple[np.ndarray, float]:
    """Expected peak viewers by rank, and the exponent used.

    The scale is set so the expected share of broadcasters below the popularity
    threshold hits ``unpopular_fraction_target``; the exponent (unless fixed) so
    the top ``top_fraction`` hold ``top_share_target`` of expected peak views.
    """
    n = p.broadcasters
    ranks = np.arange(1, n + 1, dtype=float)

    def means_for(s):
        def below_gap(log_a):
            lam = np.exp(log_a) * ranks ** -s
            return _poisson_below(lam, p.popular_threshold).mean() - p.unpopular_fraction_target

        log_a = _bisect(below_gap, -5.0, 60.0)
        return np.exp(log_a) * ranks ** -s

    if p.zipf_exponent is not None:
        s = p.zipf_exponent
    else:
        top = max(1, int(round(p.top_fraction * n)))

        def share_gap(s):
            lam = means_for(s)
            return lam[:top].sum() / lam.sum() - p.top_share_target

        s = _bisect(share_gap, 0.3, 3.0, iters=40)
    return means_for(s), s


def diurnal_profile(p: GeneratorParams) -> np.ndarray:
    """Per-slot intensity in [0, 1]: 1 inside the peak window, cosine taper outside."""
    hours = (np.arange(p.slots_per_day) + 0.5) * 24.0 / p.slots_per_day
    a, b = p.peak_window_hours
    off = 24.0 - (b - a)
    dist = np.where(hours < a, a - hours, np.where(hours >= b, hours - b, 0.0))
    dist = np.minimum(dist, 24.0 - (b - a) - dist)
    return np.where(dist == 0, 1.0, 0.5 * (1 + np.cos(np.pi * dist / (off / 2))))


def lognormal_mu(anchor: float, quantile: float, sigma: float) -> float:
    from statistics import NormalDist

    return math.log(anchor) - NormalDist().inv_cdf(quantile) * sigma


def triangular_series(peak: int, duration: int) -> Tuple[int, ...]:
    """Linear ramp up to ``peak`` at the middle slot and back down."""
    if duration == 1:
        return (peak,)
    apex = (duration - 1) // 2
    up = [round(peak * (i + 1) / (apex + 1)) for i in range(apex + 1)]
    down = [round(peak * (duration - i) / (duration - apex)) for i in range(apex + 1, duration)]
    return tuple(up + down)


@dataclass
class _Session:
    b: int
    start: int
    duration: int
    event_key: str = ""


class _Calendar:
    def __init__(self, horizon: int):
        self.horizon = horizon
        self.spans: Dict[int, List[Tuple[int, int]]] = defaultdict(list)

    def free(self, b: int, start: int, duration: int) -> bool:
        end = start + duration
        return all(not (s < end and start < e) for s, e in self.spans[b])

    def book(self, b: int, start: int, duration: int) -> None:
        self.spans[b].append((start, start + duration))


def synth_trace(p: GeneratorParams) -> List[StreamRecord]:
    """Deterministic (given ``p.seed``) synthetic stream trace."""
    rng = np.random.default_rng(p.seed)
    n, m = p.broadcasters, p.slots_per_day
    horizon = p.days * m
    slot_min = p.slot_minutes

    lam, _ = zipf_means(p)
    peaks_by_rank = rng.poisson(lam)
    perm = rng.permutation(n)  # broadcaster index -> rank index
    peak = peaks_by_rank[perm]
    popular = peak >= p.popular_threshold
    partner = np.where(
        popular,
        rng.random(n) < p.partner_fraction_popular,
        rng.random(n) < p.partner_fraction_unpopular,
    )
    w = np.asarray(p.bitrate_weights, dtype=float)
    bitrate = np.asarray(p.bitrates_kbps)[rng.choice(len(w), size=n, p=w / w.sum())]

    profile = diurnal_profile(p)
    start_weights = profile / profile.sum()
    cal = _Calendar(horizon)
    sessions: List[_Session] = []

    def clip(start, duration):
        start = int(min(max(start, 0), horizon - 1))
        return start, int(max(1, min(duration, horizon - start)))

    # durations are whole slots, so "shorter than the anchor" means at most this many minutes
    anchor = (math.ceil(p.unpopular_duration_anchor_min / slot_min) - 1) * slot_min
    mu_u = lognormal_mu(anchor, p.unpopular_duration_anchor_quantile, p.unpopular_duration_sigma)

    def unpopular_duration():
        minutes = rng.lognormal(mu_u, p.unpopular_duration_sigma)
        return max(1, math.ceil(minutes / slot_min))

    def popular_duration(median):
        minutes = rng.lognormal(math.log(median), p.popular_duration_sigma)
        return max(1, math.ceil(minutes / slot_min))

    # crowdsourced events
    pop_idx = np.flatnonzero(popular)
    unpop_idx = np.flatnonzero(~popular)
    events: List[Tuple[int, int]] = []
    for day in range(p.days):
        for k in range(rng.poisson(p.events_per_day)):
            start = day * m + int(rng.choice(m, p=start_weights))
            dur = int(rng.integers(p.event_duration_slots[0], p.event_duration_slots[1] + 1))
            start, dur = clip(start, dur)
            live_events = sum(1 for s, d in events if s < start + dur and start < s + d)
            if live_events >= p.max_concurrent_events:
                continue
            size = int(rng.integers(p.event_size[0], p.event_size[1] + 1))
            key = f"event-{day}-{k}"
            members = []
            for _ in range(size * 4):
                if len(members) == size:
                    break
                pool = pop_idx if (rng.random() < p.event_popular_bias and pop_idx.size) else unpop_idx
                if not pool.size:
                    pool = pop_idx
                b = int(pool[rng.integers(pool.size)])
                if b not in members and cal.free(b, start, dur):
                    members.append(b)
            if not members:
                continue
            events.append((start, dur))
            for b in members:
                cal.book(b, start, dur)
                sessions.append(_Session(b, start, dur, key))

    # popular broadcasters: a fraction keep a daily schedule, the rest stream occasionally
    regular = rng.random(n) < p.regular_fraction
    home_start = rng.choice(m, size=n, p=start_weights)
    home_duration = np.exp(rng.normal(math.log(p.popular_duration_median_min), 0.2, size=n))
    for b in pop_idx:
        prob = p.regular_daily_prob if regular[b] else p.irregular_daily_prob
        for day in range(p.days):
            if rng.random() >= prob:
                continue
            if regular[b]:
                jitter = int(rng.integers(-p.start_jitter_slots, p.start_jitter_slots + 1))
                start = day * m + int(home_start[b]) + jitter
                dur = popular_duration(home_duration[b])
            else:
                start = day * m + int(rng.choice(m, p=start_weights))
                dur = popular_duration(p.popular_duration_median_min)
            start, dur = clip(start, dur)
            if cal.free(b, start, dur):
                cal.book(b, start, dur)
                sessions.append(_Session(int(b), start, dur))

    # unpopular broadcasters arrive as a diurnally modulated Poisson stream
    lo, hi = p.unpopular_arrivals
    rate = p.scale * (lo + (hi - lo) * profile)
    if unpop_idx.size:
        for t in range(horizon):
            for _ in range(rng.poisson(rate[t % m])):
                dur = unpopular_duration()
                start, dur = clip(t, dur)
                for _try in range(8):
                    b = int(unpop_idx[rng.integers(unpop_idx.size)])
                    if cal.free(b, start, dur):
                        cal.book(b, start, dur)
                        sessions.append(_Session(b, start, dur))
                        break

    # everyone in the population streams at least once in the window
    streamed = {s.b for s in sessions}
    for b in range(n):
        if b in streamed:
            continue
        start = int(rng.integers(p.days)) * m + int(rng.choice(m, p=start_weights))
        dur = popular_duration(p.popular_duration_median_min) if popular[b] else unpopular_duration()
        start, dur = clip(start, dur)
        cal.book(b, start, dur)
        sessions.append(_Session(b, start, dur))

    # session peaks: one session per broadcaster carries the broadcaster's peak
    by_b: Dict[int, List[int]] = defaultdict(list)
    for i, s in enumerate(sessions):
        by_b[s.b].append(i)
    session_peak = np.zeros(len(sessions), dtype=np.int64)
    for b, idxs in by_b.items():
        frac = rng.uniform(p.session_peak_floor, 1.0, size=len(idxs))
        session_peak[idxs] = np.floor(peak[b] * frac).astype(np.int64)
        session_peak[idxs[int(rng.integers(len(idxs)))]] = peak[b]

    width = len(str(n - 1))
    records = [
        StreamRecord(
            broadcaster_id=f"b{s.b:0{width}d}",
            start_slot=s.start,
            duration_slots=s.duration,
            event_key=s.event_key,
            viewers=triangular_series(int(session_peak[i]), s.duration),
            bitrate_kbps=int(bitrate[s.b]),
            partner=bool(partner[s.b]),
        )
        for i, s in enumerate(sessions)
    ]
    records.sort(key=lambda r: (r.start_slot, r.broadcaster_id))
    return records


def zipf_fit(peaks: Sequence[int]) -> Tuple[float, float]:
    """Least-squares log-log fit of peak viewers against rank; returns (slope, R^2).
    Zero-viewer broadcasters are left out of the fit."""
    y = np.sort(np.asarray(peaks, dtype=float))[::-1]
    ranks = np.arange(1, y.size + 1, dtype=float)
    keep = y > 0
    if keep.sum() < 2:
        return math.nan, math.nan
    x, y = np.log10(ranks[keep]), np.log10(y[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = ((y - y.mean()) ** 2).sum()
    return float(slope), float(1 - (resid ** 2).sum() / ss_tot) if ss_tot > 0 else 1.0


def calibration_report(
    records: Sequence[StreamRecord], p: GeneratorParams
) -> Tuple[Dict[str, float], List[str]]:
    """Summary statistics of a trace against the calibration targets, plus warnings."""
    warnings: List[str] = []
    peak: Dict[str, int] = defaultdict(int)
    for r in records:
        peak[r.broadcaster_id] = max(peak[r.broadcaster_id], r.peak)
    peaks = np.array(sorted(peak.values(), reverse=True))
    out: Dict[str, float] = {"broadcasters": float(peaks.size), "streams": float(len(records))}
    if not peaks.size:
        warnings.append("trace is empty; nothing to calibrate")
        return out, warnings
    slope, r2 = zipf_fit(peaks)
    top = max(1, int(round(p.top_fraction * peaks.size)))
    out["zipf_slope"] = slope
    out["zipf_r2"] = r2
    out["frac_peak_below_threshold"] = float((peaks < p.popular_threshold).mean())
    out["top_share"] = float(peaks[:top].sum() / peaks.sum()) if peaks.sum() else math.nan

    unpopular = {b for b, v in peak.items() if v < p.popular_threshold}
    durations = np.array(
        [r.duration_slots * p.slot_minutes for r in records if r.broadcaster_id in unpopular]
    )
    if durations.size:
        out["unpopular_frac_below_anchor"] = float(
            (durations < p.unpopular_duration_anchor_min).mean()
        )
    else:
        warnings.append("no unpopular broadcasters: duration calibration cannot be met")

    horizon = max(r.end_slot for r in records)
    arr_u = np.zeros(horizon)
    arr_p = np.zeros(horizon)
    views = np.zeros(horizon)
    event_views = np.zeros(horizon)
    keys_live: Dict[int, set] = defaultdict(set)
    for r in records:
        (arr_u if r.broadcaster_id in unpopular else arr_p)[r.start_slot] += 1
        v = np.asarray(r.viewers, dtype=float)
        views[r.start_slot:r.end_slot] += v
        if r.event_key:
            event_views[r.start_slot:r.end_slot] += v
            for t in range(r.start_slot, r.end_slot):
                keys_live[t].add(r.event_key)
    # hourly mean arrival rate, expressed at the reference population
    per_hour = max(1, p.slots_per_day // 24)
    hours = np.arange(horizon) // per_hour % max(1, p.slots_per_day // per_hour)

    def hourly(arr):
        means = [arr[hours == h].mean() for h in np.unique(hours)]
        return min(means) / p.scale, max(means) / p.scale

    out["unpopular_arrivals_min_ref"], out["unpopular_arrivals_max_ref"] = hourly(arr_u)
    out["popular_arrivals_max_ref"] = hourly(arr_p)[1]
    share = np.divide(event_views, views, out=np.zeros_like(views), where=views > 0)
    out["event_view_share_mean"] = float(share.mean())
    out["event_view_share_max"] = float(share.max())
    out["max_concurrent_events"] = float(max((len(k) for k in keys_live.values()), default=0))

    if r2 < 0.95:
        warnings.append(f"Zipf fit R^2 {r2:.3f} below 0.95")
    if peaks.size < 5000:
        warnings.append(f"population {peaks.size} < 5000: Zipf/share statistics are noisy")
    if not p.slot_length_ok():
        warnings.append("slots_per_day * slot_minutes does not cover one day")
    return out, warnings
