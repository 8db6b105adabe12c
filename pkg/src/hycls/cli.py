"""Command-line front door: ``gen-trace``, ``simulate`` and ``validate``.

Exit codes: 0 success, 1 validation failure or infeasible run, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import yaml
from pydantic import ValidationError

from . import __version__
from .assign import InfeasibleAssignment
from .config import SimConfig, format_validation_error, load_config, load_generator_params
from .engine import SimReport, SimulationError, Strategy, run, write_report
from .trace import Trace, TraceError, calibration_report, dump_trace, load_trace, synth_trace

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    config_path: Optional[str]
    trace_path: Optional[str]
    out_dir: str
    strategies: List[str] = field(default_factory=lambda: [s.value for s in Strategy])
    seed: Optional[int] = None
    strict_budget: bool = False

    def __post_init__(self):
        if not self.strategies:
            raise UsageError("at least one strategy is required")
        for s in self.strategies:
            try:
                Strategy(s)
            except ValueError:
                choices = ", ".join(x.value for x in Strategy)
                raise UsageError(f"unknown strategy {s!r} (choose from {choices})") from None
        if len(set(self.strategies)) != len(self.strategies):
            raise UsageError("strategies must not repeat")

    def check_out_dir(self) -> Path:
        out = Path(self.out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {out}: {exc}") from None
        if not os.access(out, os.W_OK):
            raise UsageError(f"output directory {out} is not writable")
        return out


def _err(msg: str) -> None:
    print(f"hycls: {msg}", file=sys.stderr)


def _strategies(text: str) -> List[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _config(path: Optional[str], seed: Optional[int], strict_budget: bool = False) -> SimConfig:
    if path is not None and not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    cfg = load_config(path)
    if seed is not None:
        gen = cfg.generator.model_copy(update={"seed": seed})
        cfg = cfg.model_copy(update={"generator": gen}).with_overrides(seed=seed)
    if strict_budget:
        cfg = cfg.with_overrides(strict_budget=True)
    return cfg


def _print_calibration(stats: dict, warnings: Sequence[str]) -> None:
    print("calibration:")
    for k in sorted(stats):
        print(f"  {k:32s} {stats[k]:.4f}")
    for w in warnings:
        print(f"warning: {w}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen_trace(args) -> int:
    if args.params is not None:
        if not Path(args.params).is_file():
            raise UsageError(f"params file not found: {args.params}")
        params = load_generator_params(args.params)
    else:
        params = _config(args.config, None).generator
    if args.seed is not None:
        params = params.model_copy(update={"seed": args.seed})
    records = synth_trace(params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_trace(records, out)
    print(f"wrote {len(records)} sessions for {params.broadcasters} broadcasters to {out}")
    stats, warnings = calibration_report(records, params)
    _print_calibration(stats, warnings)
    return EXIT_OK


def _comparison(reports: Sequence[SimReport], out: Path) -> None:
    rows = []
    for r in reports:
        nc = r.normalized_cost
        daily = r.daily_normalized_cost or []
        rows.append([r.strategy.value, f"{r.total_cost:.6f}", "" if nc is None else f"{nc:.6f}"]
                    + ["" if d is None else f"{d:.6f}" for d in daily])
    days = max(len(r.daily_cost) for r in reports)
    header = ["strategy", "total_cost", "normalized_cost"] + [f"day{d}" for d in range(days)]
    with open(out / "comparison.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    print(f"{'strategy':10s} {'total_cost':>12s} {'vs LB-C':>8s}")
    for r in reports:
        nc = r.normalized_cost
        print(f"{r.strategy.value:10s} {r.total_cost:12.4f} {'-' if nc is None else f'{nc:8.3f}':>8s}")


def cmd_simulate(args) -> int:
    manifest = RunManifest(
        config_path=args.config,
        trace_path=args.trace,
        out_dir=args.out,
        strategies=_strategies(args.strategies),
        seed=args.seed,
        strict_budget=args.strict_budget,
    )
    out = manifest.check_out_dir()
    cfg = _config(manifest.config_path, manifest.seed, manifest.strict_budget)
    if manifest.trace_path is not None:
        if not Path(manifest.trace_path).is_file():
            raise UsageError(f"trace file not found: {manifest.trace_path}")
        trace = load_trace(manifest.trace_path, cfg.generator.slots_per_day)
        for d in trace.diagnostics:
            print(f"warning: {d}", file=sys.stderr)
    else:
        trace = Trace(synth_trace(cfg.generator), cfg.generator.slots_per_day)
    (out / "manifest.json").write_text(
        json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    strategies = [Strategy(s) for s in manifest.strategies]
    compare = len(strategies) > 1
    # the baseline goes first so the others can be normalized against it
    order = sorted(strategies, key=lambda s: s is not Strategy.LB_C)
    baseline = None
    reports = {}
    for s in order:
        try:
            rep = run(cfg, trace, s, baseline=baseline, normalize=compare)
        except (InfeasibleAssignment, SimulationError) as exc:
            partial = getattr(exc, "partial", None)
            if partial is not None:
                write_report(partial, out, f"{s.value}.partial")
            _err(f"{s.value}: {exc}")
            return EXIT_INVALID
        if s is Strategy.LB_C:
            baseline = rep
        reports[s] = rep
        csv_path, json_path = write_report(rep, out)
        print(f"{s.value}: total cost {rep.total_cost:.4f} -> {csv_path}, {json_path}")
    if compare:
        _comparison([reports[s] for s in strategies], out)
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.trace)
    if not path.is_file():
        raise UsageError(f"trace file not found: {path}")
    try:
        trace = load_trace(path, args.slots_per_day, max_bad_fraction=1.0)
    except TraceError as exc:
        for d in exc.diagnostics or [str(exc)]:
            print(d)
        return EXIT_INVALID
    for d in trace.diagnostics:
        print(d)
    status = "clean" if not trace.diagnostics else f"{len(trace.diagnostics)} bad line(s)"
    print(f"{path}: {len(trace.records)} records, {len(trace.broadcasters)} broadcasters, {status}")
    return EXIT_OK if not trace.diagnostics else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hycls", description="Hybrid-cloud live streaming placement simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-trace", help="write a synthetic JSON-lines trace")
    g.add_argument("--config", help="YAML config; its generator section is used")
    g.add_argument("--params", help="YAML file with generator parameters (overrides --config)")
    g.add_argument("--out", required=True, help="trace file to write")
    g.add_argument("--seed", type=int, help="overrides the generator seed")
    g.set_defaults(func=cmd_gen_trace)

    s = sub.add_parser("simulate", help="run placement strategies over a trace")
    s.add_argument("--config", help="YAML config (defaults are shipped with the package)")
    s.add_argument("--trace", help="JSON-lines trace; generated from the config when omitted")
    s.add_argument("--out", default="results", help="output directory (default: results)")
    s.add_argument("--seed", type=int, help="overrides generator and simulation seeds")
    s.add_argument("--strategies", default="hycls,lb-v,lb-c",
                   help="comma-separated subset of hycls, lb-v, lb-c")
    s.add_argument("--strict-budget", action="store_true",
                   help="cap cloud leasing at the budgets instead of just reporting overruns")
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", help="check a trace file")
    v.add_argument("trace", help="JSON-lines trace file")
    v.add_argument("--slots-per-day", type=int, default=288, help="slots per day (default: 288)")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except ValidationError as exc:
        for line in format_validation_error(exc):
            _err(line)
        return EXIT_INVALID
    except (TraceError, yaml.YAMLError, ValueError) as exc:
        _err(str(exc))
        for d in getattr(exc, "diagnostics", ())[:20]:
            _err(d)
        return EXIT_INVALID
