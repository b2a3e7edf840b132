"""Command-line entry point: ``addf pipeline|simulate|sweep|version``.

Every command that writes files drops a ``manifest.json`` next to them;
feeding that manifest back through ``--config`` reruns the command with
the same inputs and seed.

Exit codes: 0 success, 2 usage or config error, 3 runtime contract violation.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .imaging import run_pipeline
from .rasters import read_raster, write_pgm
from .simulator import TALLY_COLUMNS, ConfigError, SimConfig, run_experiment, set_path, tally_csv

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT = 0, 2, 3
SEED_ENV = "ADDF_SEED"


class UsageError(Exception):
    pass


def _seed_override(flag):
    """--seed beats $ADDF_SEED; None when neither is set."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env in (None, ""):
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer")


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})")
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return doc


def _write_manifest(out: Path, command: str, seed, artifacts, started: float, **extra) -> None:
    doc = {"command": command, **extra, "seed": seed, "artifacts": sorted(artifacts),
           "version": __version__, "duration_s": round(time.perf_counter() - started, 6)}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- pipeline ----------------------------------------------------------------

def _pipeline_params(args) -> tuple[list[str], dict, str | None]:
    params = {"p": 12, "sigma": 2.5, "k_clusters": 10, "obs_levels": 3, "seed": 0,
              "diff_clip": "neg", "severity": "uniform"}
    inputs, mask = list(args.inputs), args.mask
    if args.config:
        doc = _load_json(args.config)
        if doc.get("command") != "pipeline":
            raise UsageError(f"{args.config}: not a pipeline manifest")
        params.update(doc.get("params", {}))
        inputs = inputs or list(doc.get("inputs", []))
        mask = mask or doc.get("mask")
    for name in ("p", "sigma", "k_clusters", "obs_levels", "diff_clip", "severity"):
        v = getattr(args, name)
        if v is not None:
            params[name] = v
    seed = _seed_override(args.seed)
    if seed is not None:
        params["seed"] = seed
    return inputs, params, mask


def cmd_pipeline(args) -> int:
    started = time.perf_counter()
    inputs, params, mask_path = _pipeline_params(args)
    if len(inputs) < 2:
        raise UsageError("pipeline needs at least two rasters")
    images = []
    for path in inputs:
        try:
            images.append(read_raster(path))
        except (OSError, ValueError) as exc:
            raise UsageError(f"{path}: {exc}")
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise UsageError(f"rasters differ in size: {sorted(shapes)}")
    for path, im in zip(inputs, images):
        if im.min() < 0 or im.max() > 1:
            raise UsageError(f"{path}: intensities must lie in [0, 1]")
    mask = None
    if mask_path:
        try:
            mask = read_raster(mask_path) > 0
        except (OSError, ValueError) as exc:
            raise UsageError(f"{mask_path}: {exc}")
    try:
        res = run_pipeline(images, p=int(params["p"]), sigma=float(params["sigma"]),
                           k=int(params["k_clusters"]), levels=int(params["obs_levels"]),
                           seed=int(params["seed"]), mask=mask, clip=params["diff_clip"],
                           severity=params["severity"])
    except ValueError as exc:
        raise UsageError(str(exc))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, img):
        write_pgm(out / name, img, maxval=65535)
        written.append(name)

    for i, a in enumerate(res.approximated):
        put(f"approx_{i:02d}.pgm", a)
    # diffs are non-positive; store their magnitude
    for i, d in enumerate(res.diffs):
        put(f"diff_{i:02d}_{i + 1:02d}.pgm", np.abs(d))
    put("variance.pgm", res.variance)
    put("blurred.pgm", res.blurred)
    # label image: sector id + 1, 0 outside the field
    put("labels.pgm", (res.labels + 1) / 65535.0)
    sectors = [s.to_dict() for s in res.sectors]
    (out / "sectors.json").write_text(json.dumps(sectors, indent=2) + "\n")
    written.append("sectors.json")
    _write_manifest(out, "pipeline", params["seed"], written, started,
                    inputs=[str(Path(p).resolve()) for p in inputs],
                    mask=str(Path(mask_path).resolve()) if mask_path else None, params=params)
    print(f"{len(sectors)} sectors -> {out}")
    return EXIT_OK


# --- simulate ----------------------------------------------------------------

def _sim_doc(config_path) -> dict:
    if not config_path:
        return SimConfig().to_dict()
    doc = _load_json(config_path)
    # a manifest carries the full config snapshot
    if "command" in doc and "config" in doc:
        doc = doc["config"]
    return doc


def _simulate_into(cfg: SimConfig, out: Path, started: float, quiet: bool = False):
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg)
    (out / "tally.csv").write_text(tally_csv(result))
    result.events.write(out / "events.ndjson")
    _write_manifest(out, "simulate", cfg.seed, ["tally.csv", "events.ndjson"], started,
                    config=cfg.to_dict())
    if not quiet:
        for name, t in result.tallies.items():
            print(f"{name:>6}: accuracy {t.accuracy:.4f} over {t.total} decisions")
    return result


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    doc = _sim_doc(args.config)
    seed = _seed_override(args.seed)
    if seed is not None:
        doc = {**doc, "seed": seed}
    if args.stress_decay is not None:
        doc = {**doc, "stress": {**doc.get("stress", {}), "decay": args.stress_decay}}
    cfg = SimConfig.from_dict(doc)
    _simulate_into(cfg, Path(args.out), started)
    return EXIT_OK


# --- sweep -------------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _slug(axis: str, value) -> str:
    return re.sub(r"[^A-Za-z0-9._=-]+", "_", f"{axis}={json.dumps(value)}")


SWEEP_COLUMNS = ["value"] + TALLY_COLUMNS + ["decisions_per_season"]


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    if not args.values:
        raise UsageError("sweep needs at least one value")
    base = _sim_doc(args.config)
    base = SimConfig.from_dict(base).to_dict()
    seed = _seed_override(args.seed)
    if seed is not None:
        base["seed"] = seed
    values = [_parse_value(v) for v in args.values]
    try:
        configs = [SimConfig.from_dict(set_path(base, args.axis, v)) for v in values]
    except KeyError:
        raise UsageError(f"unknown sweep axis {args.axis!r}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, subdirs = [], []
    for value, cfg in zip(values, configs):
        sub = _slug(args.axis, value)
        subdirs.append(sub)
        res = _simulate_into(cfg, out / sub, time.perf_counter(), quiet=True)
        for name, t in res.tallies.items():
            rows.append([json.dumps(value), name, t.tp, t.tn, t.fp, t.fn, f"{t.accuracy:.6f}",
                         f"{res.decisions_per_season(name):.6f}"])
        print(f"{args.axis}={json.dumps(value)}: " + ", ".join(
            f"{n} {t.accuracy:.4f}" for n, t in res.tallies.items()))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    _write_manifest(out, "sweep", base["seed"], ["summary.csv"] + subdirs, started,
                    config=base, axis=args.axis, values=values)
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"addf {__version__}")
    return EXIT_OK


# --- wiring ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="addf", description="Field stress detection and layered "
                                 "call-to-action simulations.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="variance pipeline over an ordered raster series")
    p.add_argument("inputs", nargs="*", help="PGM or CSV rasters, oldest first")
    p.add_argument("--p", type=int, help="block size (default 12)")
    p.add_argument("--sigma", type=float, help="blur sigma (default 2.5)")
    p.add_argument("--k-clusters", dest="k_clusters", type=int, help="sector count (default 10)")
    p.add_argument("--obs-levels", dest="obs_levels", type=int, help="severity levels (default 3)")
    p.add_argument("--diff-clip", dest="diff_clip", choices=["neg", "pos"],
                   help="keep min(a-b, 0) (neg, default) or min(b-a, 0) (pos)")
    p.add_argument("--severity", choices=["uniform", "kmeans"],
                   help="severity levels from uniform bins (default) or clustered means")
    p.add_argument("--mask", help="field mask raster; nonzero cells are in the field")
    p.add_argument("--config", help="manifest of an earlier pipeline run to repeat")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="pipeline_out")
    p.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("simulate", help="run one crop-season experiment")
    s.add_argument("--config", help="JSON config or a simulate manifest")
    s.add_argument("--seed", type=int)
    s.add_argument("--stress-decay", dest="stress_decay", type=float,
                   help="daily decay of the stress flip probability (default 0.9)")
    s.add_argument("--out", default="simulate_out")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="rerun an experiment over values of one config key")
    w.add_argument("--config", help="base JSON config")
    w.add_argument("--axis", required=True, help="dotted config key, e.g. heuristic.m")
    w.add_argument("--values", nargs="*", default=[], help="JSON scalars")
    w.add_argument("--seed", type=int)
    w.add_argument("--out", default="sweep_out")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("version", help="print the package version")
    v.set_defaults(func=cmd_version)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"addf {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"addf {args.command}: invalid config", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_USAGE
    except (AssertionError, RuntimeError) as exc:
        print(f"addf {args.command}: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
