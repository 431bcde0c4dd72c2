"""Command line entry point: ``riccilab run | inspect | sweep``."""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import subprocess
import sys
from pathlib import Path

from ..errors import ConfigError, RiccilabError
from .config import ExperimentConfig, dump_config, load_config, set_value
from .experiments import run_experiment
from .snapshot import snapshot_header, snapshot_read

log = logging.getLogger("riccilab")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        cfg = set_value(cfg, key.strip(), value)
    if args.seed is not None:
        cfg = cfg.replace("experiment", seed=args.seed)
    if args.resolution is not None:
        cfg = cfg.replace("grid", resolution=(args.resolution,) * cfg.grid.dim)
    return cfg.validate()


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return _apply_overrides(cfg, args)


def cmd_run(args) -> int:
    cfg = _load(args)
    out = args.out_dir or cfg.experiment.output_dir
    log.info("running %s (seed %d) into %s", cfg.experiment.name, cfg.experiment.seed, out)
    code, summary = run_experiment(cfg, out)
    if not args.quiet:
        keys = ("experiment", "verdict", "terminal_reason", "lambda_final", "travel", "theta_fit", "wall_time")
        for k in keys:
            if k in summary:
                print(f"{k:>16}: {summary[k]}")
        if "message" in summary:
            print(f"{'error':>16}: {summary.get('error')}: {summary['message']}")
    return code


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        summary = path / "summary.json"
        if not summary.exists():
            print(f"{path}: no summary.json", file=sys.stderr)
            return 2
        print(summary.read_text(), end="")
        return 0
    if path.suffix == ".json":
        print(path.read_text(), end="")
        return 0
    if path.suffix == ".csv":
        lines = path.read_text().splitlines()
        print(f"{path}: {max(len(lines) - 1, 0)} records")
        if len(lines) > 1:
            for name, val in zip(lines[0].split(","), lines[-1].split(",")):
                print(f"{name:>16}: {val}")
        return 0
    header = snapshot_header(path)
    state = snapshot_read(path)
    print(json.dumps(header, indent=2, sort_keys=True))
    if args.lam:
        from ..spectral import lambda_of

        print(f"lambda: {lambda_of(state.g).lam:.17g}")
    return 0


def cmd_sweep(args) -> int:
    """Run one subprocess per combination of ``--vary`` values and seeds."""
    base = _load(args)
    axes = []
    for item in args.vary or []:
        key, sep, values = item.partition("=")
        if not sep:
            raise ConfigError(f"--vary expects section.key=v1,v2,..., got {item!r}")
        axes.append([(key.strip(), v.strip()) for v in values.split(",")])
    seeds = [int(s, 0) for s in args.seeds.split(",")] if args.seeds else [base.experiment.seed]
    root = Path(args.out_dir or base.experiment.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    config_path = root / "base.ini"
    config_path.write_text(dump_config(base), encoding="utf-8")

    runs = []
    for k, (combo, seed) in enumerate(itertools.product(itertools.product(*axes), seeds)):
        out = root / f"run{k:03d}"
        cmd = [sys.executable, "-m", "riccilab.lab", "run", "--config", str(config_path)]
        cmd += ["--out-dir", str(out), "--seed", str(seed), "--quiet"]
        for key, v in combo:
            cmd += ["--set", f"{key}={v}"]
        runs.append((out, dict(combo), seed, cmd))

    procs = []
    results = []
    pending = list(runs)
    while pending or procs:
        while pending and len(procs) < args.jobs:
            out, combo, seed, cmd = pending.pop(0)
            procs.append((out, combo, seed, subprocess.Popen(cmd)))
        out, combo, seed, p = procs.pop(0)
        code = p.wait()
        results.append({"out_dir": str(out), "overrides": combo, "seed": seed, "exit_code": code})
        if not args.quiet:
            print(f"{out}: exit {code} {combo} seed={seed}")
    (root / "sweep.json").write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
    return max((r["exit_code"] for r in results), default=0)


def _add_config_flags(p):
    p.add_argument("--config", help="INI experiment configuration")
    p.add_argument("--out-dir", help="output directory (overrides experiment.output_dir)")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="unsigned 64-bit seed")
    p.add_argument("--resolution", type=int, help="grid points per axis")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config entry")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="riccilab", description="Ricci-type flows and lambda on flat tori")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    _add_config_flags(run)
    run.set_defaults(func=cmd_run)

    ins = sub.add_parser("inspect", help="show a run directory, summary, CSV or snapshot")
    ins.add_argument("path")
    ins.add_argument("--lam", action="store_true", help="also compute lambda of a snapshot")
    ins.add_argument("--quiet", action="store_true")
    ins.set_defaults(func=cmd_inspect)

    sw = sub.add_parser("sweep", help="run a parameter sweep as independent processes")
    _add_config_flags(sw)
    sw.add_argument("--vary", action="append", metavar="SECTION.KEY=V1,V2", help="values to sweep")
    sw.add_argument("--seeds", help="comma separated seeds")
    sw.add_argument("--jobs", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except RiccilabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
