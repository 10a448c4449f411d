"""Command line front end: analyze one parameter value, sweep a family, self-test.

Runs are driven by an INI-style config file (see README for the grammar).
Exit codes: 0 on a completed analysis whatever the verdicts, 1 on runtime
errors, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis as an
from . import report
from .cubegrid import CubicalGrid, NotIsolated
from .dynamics import EscapePolicy, ParametrizedFlow, load_flow
from .expr import ExpressionError


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    system: str
    flow: ParametrizedFlow
    grid: CubicalGrid
    lambdas: tuple[float, ...]
    settings: an.Settings
    policy: EscapePolicy
    thresholds: Optional[tuple[float, ...]]
    box_mode: str = "explicit"
    out_dir: Path = Path("out")
    formats: tuple[str, ...] = ("json", "csv", "svg")
    timestamp: bool = True
    regions: Optional[an.RegionFn] = field(default=None, compare=False)

    def to_json(self) -> dict:
        return {
            "system": self.system,
            "grid": self.grid.to_json(),
            "box": self.box_mode,
            "lambdas": list(self.lambdas),
            "escape_radius": self.policy.radius,
            "thresholds": None if self.thresholds is None else list(self.thresholds),
            "settings": self.settings.to_json(),
        }


def _floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{what}: expected finite numbers, got {text!r}")
    return vals


def _ints(text: str, what: str) -> list[int]:
    vals = _floats(text, what)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{what}: expected integers, got {text!r}")
    return [int(v) for v in vals]


def _per_axis(vals: list, dim: int, what: str) -> list:
    if len(vals) == 1:
        return vals * dim
    if len(vals) != dim:
        raise ConfigError(f"{what}: expected 1 or {dim} values, got {len(vals)}")
    return vals


def load_config(path: Path, out: Optional[Path] = None, single: bool = False) -> RunConfig:
    """Parse and validate a run config; every problem raises ConfigError."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    def get(section: str, key: str, default=None):
        if cp.has_option(section, key):
            return cp.get(section, key).strip()
        return default

    name = get("system", "name")
    if not name:
        raise ConfigError("system: 'name' is required")
    source = name
    if name not in ("spiral", "lorenz", "saddle", "sink", "frozen_sink", "double_well"):
        source = str((Path(path).parent / name).resolve())
    try:
        flow = load_flow(source)
    except (OSError, ExpressionError, ValueError, KeyError) as exc:
        raise ConfigError(f"system: cannot load {name!r}: {exc}") from None
    dim = flow.dim

    lam_text = get("parameters", "lambda")
    list_text = get("parameters", "lambdas")
    range_text = get("parameters", "range")
    given = [t for t in (lam_text, list_text, range_text) if t is not None]
    if len(given) != 1:
        raise ConfigError("parameters: give exactly one of 'lambda', 'lambdas', 'range'")
    if range_text is not None:
        vals = _floats(range_text, "parameters.range")
        if len(vals) != 3 or vals[2] != int(vals[2]) or vals[2] < 1:
            raise ConfigError("parameters.range: expected 'min, max, count'")
        lams = [float(x) for x in np.linspace(vals[0], vals[1], int(vals[2]))]
    else:
        lams = _floats(lam_text if lam_text is not None else list_text, "parameters")
    lo_p, hi_p = flow.param_range
    for v in lams:
        if not lo_p <= v <= hi_p:
            raise ConfigError(f"parameters: lambda={v:g} outside the range [{lo_p:g}, {hi_p:g}] of {name}")
    lams = sorted(set(lams))
    if single and len(lams) != 1:
        raise ConfigError("parameters: analyze needs exactly one lambda")
    if not single and len(lams) < 2:
        raise ConfigError("parameters: a sweep needs at least two lambda values")

    def num(section, key, default, kind=float, low=None):
        text = get(section, key)
        if text is None:
            return default
        try:
            v = kind(text)
        except ValueError:
            raise ConfigError(f"{section}.{key}: cannot parse {text!r}") from None
        if low is not None and not v >= low:
            raise ConfigError(f"{section}.{key}: must be >= {low}")
        return v

    divisions = _per_axis(_ints(get("grid", "divisions", "64"), "grid.divisions"), dim, "grid.divisions")
    for k, d in enumerate(divisions):
        if d < 1:
            raise ConfigError(f"grid.divisions: axis {k} (x{k + 1}) needs at least one cell")
    box_mode = get("grid", "box", "explicit")
    regions = None
    lorenz_margin = num("grid", "margin", 2.5, float, 1.0)
    if box_mode == "lorenz":
        if "sigma" not in flow.meta:
            raise ConfigError("grid.box = lorenz needs the lorenz system")
        grid, regions = an.lorenz_setup(flow, lams, divisions, margin=lorenz_margin)
    elif box_mode in ("explicit", "ball"):
        lo = _per_axis(_floats(get("grid", "lo", ""), "grid.lo") if get("grid", "lo") else [], dim, "grid.lo")
        hi = _per_axis(_floats(get("grid", "hi", ""), "grid.hi") if get("grid", "hi") else [], dim, "grid.hi")
        for k in range(dim):
            if not lo[k] < hi[k]:
                raise ConfigError(f"grid: lo >= hi on axis {k} (x{k + 1}): {lo[k]:g} >= {hi[k]:g}")
        grid = CubicalGrid(tuple(lo), tuple(hi), tuple(divisions))
        if box_mode == "ball":
            try:
                ball = an.ball_region(grid, num("grid", "radius", None))
            except ValueError as exc:
                raise ConfigError(f"grid.radius: {exc}") from None

            def regions(lam: float, ball=ball):
                return ball
    else:
        raise ConfigError(f"grid.box: unknown value {box_mode!r} (use explicit, ball or lorenz)")

    radius_text = get("map", "escape_radius")
    if radius_text is None:
        policy = EscapePolicy.for_box(grid.lo, grid.hi)
    else:
        try:
            policy = EscapePolicy(num("map", "escape_radius", None))
            policy.check_domain(grid.lo, grid.hi)
        except ValueError as exc:
            raise ConfigError(f"map.escape_radius: {exc}") from None

    default_tau = 0.1 if "sigma" in flow.meta else 0.5
    ladder_text = get("analysis", "ladder")
    try:
        settings = an.Settings(
            tau=num("map", "tau", default_tau),
            samples_per_axis=num("map", "samples_per_axis", 2, int),
            bloat=num("map", "bloat", 1, int),
            tol=num("map", "tol", 1e-8),
            collar=num("analysis", "collar", 2, int),
            index_width=num("analysis", "index_width", 2, int),
            ladder=tuple(_floats(ladder_text, "analysis.ladder")) if ladder_text else (),
            ladder_scaling=get("analysis", "ladder_scaling", "none"),
            ladder_samples=num("analysis", "ladder_samples", 3, int),
            ladder_bloat=num("analysis", "ladder_bloat", 0, int),
            ladder_tol=num("analysis", "ladder_tol", 1e-6),
            signature_samples=num("analysis", "signature_samples", 128, int),
            signature_dt=num("analysis", "signature_dt", 0.5),
            signature_horizon=num("analysis", "signature_horizon", 4000.0),
            signature_shell=num("analysis", "signature_shell", 16, int),
            witness_horizon=num("analysis", "witness_horizon", 50.0),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"analysis: {exc}") from None

    th = get("analysis", "thresholds")
    thresholds = tuple(_floats(th, "analysis.thresholds")) if th else None
    if thresholds is not None and max(thresholds) >= grid.circumradius:
        raise ConfigError("analysis.thresholds: every L must be below the box circumradius")

    out_dir = out if out is not None else Path(get("output", "dir", "out"))
    formats = tuple(f.strip() for f in get("output", "formats", "json, csv, svg").split(",") if f.strip())
    for f in formats:
        if f not in ("json", "csv", "svg"):
            raise ConfigError(f"output.formats: unknown format {f!r}")
    ts = get("output", "timestamp", "yes").lower()
    if ts not in ("yes", "no", "true", "false"):
        raise ConfigError("output.timestamp: expected yes or no")
    return RunConfig(
        name, flow, grid, tuple(lams), settings, policy, thresholds, box_mode,
        out_dir, formats, ts in ("yes", "true"), regions,
    )


# ---------------------------------------------------------------- commands


def _log(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg, file=sys.stderr)


def _emit(cfg: RunConfig, command: str, result: dict, rows: list, svgs: dict, no_svg: bool) -> list[Path]:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in cfg.formats:
        doc = report.verdict_document(command, {"config": cfg.to_json()}, result)
        written.append(report.write_json(cfg.out_dir / "verdict.json", doc))
    if "csv" in cfg.formats:
        written.append(report.write_csv(cfg.out_dir / "sweep.csv", rows))
    if "svg" in cfg.formats and not no_svg:
        for name, text in svgs.items():
            written.append(report.write_text(cfg.out_dir / name, text))
    return written


def _cell_layers(cfg: RunConfig, K, C) -> list:
    layers = []
    if K is not None:
        layers.append((K.cells, "#c0392b"))
    if C is not None and not C.cells.is_empty:
        layers.append((C.cells, "#1f5fa8"))
    return layers


def cmd_analyze(cfg: RunConfig, threads: int = 1, no_svg: bool = False, quiet: bool = False) -> int:
    lam = cfg.lambdas[0]
    flow, grid, s = cfg.flow, cfg.grid, cfg.settings
    cache = an.MapCache(flow, grid, cfg.policy)
    region = cfg.regions(lam) if cfg.regions else None
    t0 = time.perf_counter()
    result: dict = {"lambda": lam}
    try:
        A = an.find_global_attractor(flow, lam, grid, cfg.policy, region, s, cache)
        result["global_attractor"] = {"trapping": True, "record": A.to_json()}
        _log(quiet, f"global attractor: {len(A.cells)} cells, index {A.index.cohomological if A.index else '?'}")
    except an.NotTrapping as exc:
        result["global_attractor"] = {"trapping": False, "offending_cells": len(exc.cells)}
        _log(quiet, f"region not trapping at lambda={lam:g} ({len(exc.cells)} cells leave)")
    lam0 = flow.param_range[0]
    seed_region = cfg.regions(lam0) if cfg.regions else None
    seed = an.seed_attractor(flow, lam0, grid, cfg.policy, seed_region, s, cache)
    try:
        recs = an.track_continuation(flow, [lam], seed, grid, cfg.policy, s, cache)
        K = next(r for r in recs if r.lam == lam)
        result["continuation"] = {"broken": False}
    except an.ContinuationBroken as exc:
        K = None
        result["continuation"] = {"broken": True, "lambda": exc.lam, "reason": exc.reason}
    C = sig = None
    if K is not None and K.cells.grid != grid:
        K = replace(K, cells=K.cells.project(grid), basin=None)
    if K is not None:
        result["K"] = K.to_json()
        C = an.extract_separator(flow, lam, K, grid, cfg.policy, s, cache, region)
        result["C"] = C.to_json()
        if not C.cells.is_empty:
            sig = an.coercivity_signature(flow, C, K, grid, cfg.policy, s, region)
            result["signature"] = sig.to_json()
        _log(quiet, f"K: {len(K.cells)} cells; C: {len(C.cells)} cells")
    row = an.LambdaReport(lam, K, None, C, sig).csv_row()
    row[-1] = None
    svgs = {}
    if grid.dim == 2:
        svgs["cells.svg"] = report.cellset_plot(_cell_layers(cfg, K, C), f"lambda={lam:g}", cfg.timestamp)
    files = _emit(cfg, "analyze", result, [row], svgs, no_svg)
    _log(quiet, f"wrote {', '.join(str(p) for p in files)} in {time.perf_counter() - t0:.1f}s")
    return 0


def cmd_sweep(cfg: RunConfig, threads: int = 1, no_svg: bool = False, quiet: bool = False) -> int:
    t0 = time.perf_counter()
    verdict = an.separator_pipeline(
        cfg.flow, cfg.lambdas, cfg.grid, cfg.policy, cfg.settings,
        cfg.thresholds, cfg.regions, threads=max(1, threads),
    )
    _log(
        quiet,
        f"uniform_dissipative={verdict.uniform_dissipative} polar={verdict.polar} "
        f"coercive={verdict.coercive} applicable={verdict.applicable}",
    )
    svgs = {
        "diameter.svg": report.diameter_plot(
            [(r.lam, r.C.diameter) for r in verdict.reports if r.C is not None and r.C.diameter is not None],
            timestamp=cfg.timestamp,
        )
    }
    if cfg.grid.dim == 2:
        for r in verdict.reports:
            layers = _cell_layers(cfg, r.K, r.C)
            if layers:
                svgs[f"cells_{r.lam:.6g}.svg"] = report.cellset_plot(layers, f"lambda={r.lam:g}", cfg.timestamp)
    files = _emit(cfg, "sweep", verdict.to_json(), verdict.csv_rows(), svgs, no_svg)
    _log(quiet, f"wrote {len(files)} files to {cfg.out_dir} in {time.perf_counter() - t0:.1f}s")
    return 0


def cmd_selftest(quiet: bool = False) -> int:
    from .selftest import run_selftest

    table, ok = run_selftest()
    print(table, end="")
    return 0 if ok else 1


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config file")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker cap for per-lambda work")
    common.add_argument("--no-svg", action="store_true", help="skip SVG plots")
    common.add_argument("--quiet", action="store_true", help="no progress messages")
    p = argparse.ArgumentParser(prog="conleyflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="analyze a single parameter value")
    sub.add_parser("sweep", parents=[common], help="sweep a parameter family")
    sub.add_parser("selftest", parents=[common], help="run the embedded oracle suites")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "selftest":
        return cmd_selftest(args.quiet)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.config is None:
        print(f"error: {args.command} needs --config", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, args.out, single=args.command == "analyze")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    run = cmd_analyze if args.command == "analyze" else cmd_sweep
    try:
        return run(cfg, args.threads, args.no_svg, args.quiet)
    except (RuntimeError, ArithmeticError, ValueError, OSError, NotIsolated) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
