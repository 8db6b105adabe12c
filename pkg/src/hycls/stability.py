"""Stable index, threshold evolution and the initial dedicated/cloud decision."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from .model import ActivityMatrix, BroadcasterProfile


class Normalization(str, enum.Enum):
    PAPER_VERBATIM = "paper_verbatim"  # divide by n
    ADJACENT_PAIRS = "adjacent_pairs"  # divide by n - 1


class Placement(str, enum.Enum):
    DEDICATED = "dedicated"
    CLOUD = "cloud"


def stable_index(
    a: ActivityMatrix,
    norm: Normalization = Normalization.PAPER_VERBATIM,
    strict: bool = False,
) -> float:
    """Day-over-day overlap of a broadcaster's live slots.

    Each adjacent pair of days contributes ``|overlap| / |live slots on the earlier day|``.
    A pair whose earlier day is idle contributes 0; with ``strict`` any idle earlier
    day zeroes the whole index instead.
    """
    n = a.days
    if n < 2:
        return 0.0
    d = a.d.astype(np.int64)
    prev, cur = d[:-1], d[1:]
    denom = prev.sum(axis=1)
    if strict and (denom == 0).any():
        return 0.0
    overlap = (prev * cur).sum(axis=1)
    terms = np.divide(overlap, denom, out=np.zeros(n - 1), where=denom != 0)
    z = n if Normalization(norm) is Normalization.PAPER_VERBATIM else n - 1
    return float(terms.sum() / z)


@dataclass
class StabilityState:
    H: float = 0.0
    trigger_utilization: float = 0.60
    normalization: Normalization = Normalization.PAPER_VERBATIM
    strict_idle_days: bool = False
    si_cache: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.H <= 1.0:
            raise ValueError("threshold H must lie in [0, 1]")
        if not 0.0 < self.trigger_utilization <= 1.0:
            raise ValueError("trigger utilization must lie in (0, 1]")
        self.normalization = Normalization(self.normalization)

    def si(self, b: BroadcasterProfile) -> float:
        if b.id not in self.si_cache:
            self.si_cache[b.id] = stable_index(b.activity, self.normalization, self.strict_idle_days)
        return self.si_cache[b.id]


def update_threshold(state: StabilityState, dedicated_sis: Iterable[float]) -> float:
    """Set H to the mean SI of the broadcasters hosted in dedicated datacenters."""
    values = list(dedicated_sis)
    if values:
        # clamp: fsum / len can land one ulp outside [min, max]
        state.H = min(max(math.fsum(values) / len(values), min(values)), max(values))
    return state.H


def initial_offload(
    b: BroadcasterProfile, state: StabilityState, dedicated_bw_utilization: float
) -> Placement:
    if dedicated_bw_utilization < state.trigger_utilization:
        return Placement.DEDICATED
    return Placement.DEDICATED if state.si(b) >= state.H else Placement.CLOUD
