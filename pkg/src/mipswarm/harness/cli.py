"""Command-line entry point.

    mipswarm simulate <params.json>   [--out DIR] [--seed S] [--snapshot-every K]
    mipswarm sweep <experiment.json>  [--out DIR] [--seed S] [--workers N] [--resume]
    mipswarm theory [params.json] --tau-m T [--v0 ..] [--mean-density L]
    mipswarm analyze <run-dir> <analysis.json> [--out DIR]

Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import __version__
from ..core import ConfigError, ParamError, SwarmParams, validate_params
from ..theory import TheoryError, TheoryInputs
from . import snapshots as sio
from .pipeline import analyze_snapshots, theory_report
from .simulation import AnalysisOptions, run_simulation
from .sweep import ExperimentSpec, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
log = logging.getLogger("mipswarm")


def _write_manifest(out: Path, **doc) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"version": __version__, **doc}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def _load_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def cmd_simulate(args) -> int:
    params = SwarmParams.load(args.config)
    if args.seed is not None:
        params = params.replace(seed=args.seed)
    validate_params(params)
    rec = run_simulation(params, snapshot_every=args.snapshot_every)
    out = Path(args.out)
    sio.write_metrics(out / "metrics.csv", rec.metrics)
    sio.write_snapshots(out / "snapshots.csv", rec.snapshots)
    _write_manifest(out, command="simulate", spec_hash=rec.spec_hash, params=params.to_dict(),
                    analysis=rec.analysis.to_dict(), snapshot_every=args.snapshot_every)
    print(f"{params.n_steps} steps, {len(rec.snapshots)} snapshots -> {out}")
    print(f"time-averaged v_hat = {rec.time_averaged('mean_speed'):.6g}, "
          f"aggregation fraction = {rec.time_averaged('aggregation_fraction'):.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    if args.seed is not None:
        spec = ExperimentSpec(**{**spec.__dict__, "base": spec.base.replace(seed=args.seed)})
    if args.snapshot_every is not None:
        spec = ExperimentSpec(**{**spec.__dict__, "snapshot_every": args.snapshot_every})
    for cell in spec.cells():
        validate_params(cell.params)
    out = Path(args.out)
    total = len(spec.cells())
    done = [0]

    def progress(res):
        done[0] += 1
        log.info("[%d/%d] point %d replicate %d: %s", done[0], total, res.cell.point_index,
                 res.cell.replicate, res.status)

    result = run_sweep(spec, out_dir=out, workers=args.workers, resume=args.resume, progress=progress)
    _write_manifest(out, command="sweep", experiment=spec.to_dict(),
                    spec_hashes=[c.cell.spec_hash for c in result.cells])
    for row in result.table:
        print(", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    if result.fit is not None:
        print("fit: " + ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                                  for k, v in result.fit.items()))
    if result.failed:
        print(f"{len(result.failed)} of {total} cell(s) failed; see {spec.name}_runs.csv", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_theory(args) -> int:
    base = SwarmParams.load(args.config) if args.config else SwarmParams()
    values = {"v0": base.speed, "Dt": base.diff_trans, "Dr": base.diff_rot, "r": base.radius}
    for key in values:
        if getattr(args, key) is not None:
            values[key] = getattr(args, key)
    mean_density = args.mean_density
    if mean_density is None and args.config:
        mean_density = base.mean_density
    report = theory_report(TheoryInputs(tau_m=args.tau_m, **values), mean_density)
    print(report.format())
    if args.out:
        out = Path(args.out)
        sio.write_table(out / "theory.csv", [report.to_dict()])
        _write_manifest(out, command="theory", inputs=report.inputs.__dict__, mean_density=mean_density)
    return EXIT_OK


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = _load_json(run_dir / "manifest.json")
    if "params" not in manifest:
        raise ConfigError(f"{run_dir}/manifest.json has no params")
    params = SwarmParams.from_dict(manifest["params"])
    options = AnalysisOptions.from_dict(_load_json(args.analysis_config))
    snaps = sio.read_snapshots(run_dir / "snapshots.csv")
    res = analyze_snapshots(snaps, params, options)
    out = Path(args.out) if args.out else run_dir / "analysis"
    for name, rows in res.tables().items():
        sio.write_table(out / f"{name}.csv", rows)
    _write_manifest(out, command="analyze", source=str(run_dir), params=params.to_dict(),
                    analysis=options.to_dict(), spec_hash=manifest.get("spec_hash"), modes=res.modes)
    print(f"{len(snaps)} snapshots, {len(res.fields)} in window, modes = {res.modes}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mipswarm", description="Self-propelled disk swarm simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one simulation from a flat parameter file")
    s.add_argument("config")
    s.add_argument("--out", default="run")
    s.add_argument("--seed", type=int)
    s.add_argument("--snapshot-every", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="run an experiment spec")
    s.add_argument("spec")
    s.add_argument("--out", default="sweep")
    s.add_argument("--seed", type=int, help="override the base seed")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--resume", action="store_true", help="reuse finished cells in --out")
    s.add_argument("--snapshot-every", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("theory", help="closed-form predictions")
    s.add_argument("config", nargs="?", help="optional parameter file supplying v0, Dt, Dr, r")
    s.add_argument("--tau-m", type=float, required=True)
    s.add_argument("--v0", type=float)
    s.add_argument("--Dt", type=float)
    s.add_argument("--Dr", type=float)
    s.add_argument("--r", type=float)
    s.add_argument("--mean-density", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_theory)

    s = sub.add_parser("analyze", help="analyse stored snapshots")
    s.add_argument("run_dir")
    s.add_argument("analysis_config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors; that is our runtime code
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParamError, TheoryError, sio.MalformedFile) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
