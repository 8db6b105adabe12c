"""Configuration schema and loading. A config is one YAML document with
``generator``, ``simulation``, ``regions``, ``ladder`` and ``latency`` sections;
omitted sections take the shipped defaults.
"""
from __future__ import annotations

import copy
from importlib import resources
from typing import Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .model import Region, RegionKind
from .stability import Normalization
from .trace import GeneratorParams

DEFAULT_CONFIG_NAME = "default_config.yaml"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RegionConfig(_Strict):
    id: str
    kind: RegionKind
    zone: str
    bandwidth_cap: float = Field(gt=0)
    compute_cap: float = Field(gt=0)
    instance_bandwidth: float = Field(700.0, gt=0)
    unit_compute: float = Field(2.0, gt=0)
    price_bandwidth: float = Field(0.0, ge=0)
    price_compute: float = Field(0.0, ge=0)
    ingest_latency: float = Field(2.0, ge=0)

    def to_region(self, delivery: Dict[str, float]) -> Region:
        return Region(
            id=self.id,
            kind=self.kind,
            bandwidth_cap=self.bandwidth_cap,
            compute_cap=self.compute_cap,
            instance_bandwidth=self.instance_bandwidth,
            unit_compute=self.unit_compute,
            price_bandwidth=self.price_bandwidth,
            price_compute=self.price_compute,
            delivery_latency=dict(delivery),
        )


class Rung(_Strict):
    label: str
    bitrate: int = Field(gt=0)
    compute: float = Field(gt=0)


class LadderConfig(_Strict):
    rungs: List[Rung]
    ingest_compute: float = Field(0.1, gt=0)
    source_share: float = Field(0.45, gt=0, le=1)


class LatencyConfig(_Strict):
    broadcaster_zones: Dict[str, float]
    zone_link: Dict[str, Dict[str, float]]
    link_jitter: float = Field(0.6, ge=0)
    transcode_base: float = Field(3.0, ge=0)
    transcode_per_mbps_in: float = Field(0.5, ge=0)
    transcode_per_mbps_out: float = Field(0.3, ge=0)
    load_bands: List[Tuple[str, float]]
    delivery: Dict[str, float]

    @model_validator(mode="after")
    def _check(self):
        if not self.broadcaster_zones or sum(self.broadcaster_zones.values()) <= 0:
            raise ValueError("broadcaster_zones needs at least one positive weight")
        for z in self.broadcaster_zones:
            if z not in self.zone_link:
                raise ValueError(f"zone_link has no row for broadcaster zone {z!r}")
        edges = [e for _, e in self.load_bands]
        if not edges or edges != sorted(edges) or edges[-1] < 1.0:
            raise ValueError("load_bands upper edges must be increasing and end at >= 1.0")
        if "source" not in self.delivery:
            raise ValueError("delivery needs a 'source' entry")
        return self


class SimulationConfig(_Strict):
    strategy: Literal["hycls", "lb-v", "lb-c"] = "hycls"
    alpha: float = 1.0
    beta: float = Field(0.011, gt=0)
    slot_minutes: int = Field(5, gt=0)
    history_days: int = Field(2, ge=1)
    initial_threshold: float = Field(0.0, ge=0, le=1)
    offload_trigger: float = Field(0.60, gt=0, le=1)
    normalization: Normalization = Normalization.PAPER_VERBATIM
    strict_idle_days: bool = False
    budget_bandwidth: float = Field(1e6, gt=0)
    budget_compute: float = Field(1e6, gt=0)
    strict_budget: bool = False
    strict: bool = True
    overflow_region: Optional[str] = None
    migration_penalty: float = Field(0.0, ge=0)
    seed: int = 0


class SimConfig(_Strict):
    generator: GeneratorParams = GeneratorParams()
    simulation: SimulationConfig = SimulationConfig()
    regions: List[RegionConfig]
    ladder: LadderConfig
    latency: LatencyConfig

    @model_validator(mode="after")
    def _check(self):
        ids = [r.id for r in self.regions]
        if not ids:
            raise ValueError("at least one region is required")
        if len(set(ids)) != len(ids):
            raise ValueError("region ids must be unique")
        ov = self.simulation.overflow_region
        if ov is not None and ov not in ids:
            raise ValueError(f"overflow_region {ov!r} is not a configured region")
        for z in self.latency.zone_link.values():
            for r in self.regions:
                if r.zone not in z:
                    raise ValueError(f"zone_link rows must cover region zone {r.zone!r}")
        for rung in self.ladder.rungs:
            if rung.label not in self.latency.delivery:
                raise ValueError(f"latency.delivery has no entry for rung {rung.label!r}")
        if self.generator.slot_minutes != self.simulation.slot_minutes:
            raise ValueError("generator.slot_minutes and simulation.slot_minutes differ")
        return self

    def build_regions(self) -> List[Region]:
        return [r.to_region(self.latency.delivery) for r in self.regions]

    def with_overrides(self, **sim) -> "SimConfig":
        data = self.model_dump()
        data["simulation"].update(sim)
        return SimConfig.model_validate(data)


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def default_config_dict() -> dict:
    text = resources.files("hycls").joinpath(DEFAULT_CONFIG_NAME).read_text(encoding="utf-8")
    return yaml.safe_load(text)


def parse_config(data: Optional[dict]) -> SimConfig:
    """Merge ``data`` over the defaults and validate. Lists replace wholesale."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError("config document must be a mapping")
    return SimConfig.model_validate(_deep_merge(default_config_dict(), data))


def load_config(path=None) -> SimConfig:
    if path is None:
        return parse_config(None)
    with open(path, encoding="utf-8") as fh:
        return parse_config(yaml.safe_load(fh))


def load_generator_params(path) -> GeneratorParams:
    """Generator params from a YAML file: either a full config or a bare ``generator`` mapping."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("params document must be a mapping")
    if "generator" in data:
        data = data["generator"] or {}
    return GeneratorParams.model_validate(data)


def format_validation_error(exc: ValidationError) -> List[str]:
    return [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()]
