"""Command line entry point: run, sweep, export, verify.

Exit codes: 0 success, 1 some runs or checks failed, 2 bad configuration.
"""

import argparse
import logging
import os
import sys

from .config import ConfigError, load_config
from .export import FAMILIES, export_plots
from .runner import Cell, read_records, run_single, run_sweep, write_results


def _config(args, **extra):
    over = dict(extra)
    if getattr(args, "master_seed", None) is not None:
        over["master_seed"] = args.master_seed
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    if getattr(args, "out", None) is not None and "output" not in over:
        over["output"] = {"dir": args.out}
    return load_config(getattr(args, "config", None), **over)


def cmd_run(args):
    cfg = _config(args, output={"dir": args.out or "results", "artifacts": True})
    cell = Cell(cfg.geometry.name, float(args.Re), float(args.kappa), float(args.vpd), args.mesh, args.replicate)
    if args.mesh not in cfg["meshes"]:
        raise ConfigError(f"unknown mesh id {args.mesh!r}")
    out = cfg["output"]["dir"]
    rec = run_single(cfg, cell, seed=args.seed, outdir=os.path.join(out, "runs", cell.tag))
    write_results([rec], out, cfg)
    if rec.ok:
        print(f"{cell.tag}: e_sbi {rec.e_sbi:.4f}%  e_mri {rec.e_mri:.4f}%  "
              f"theta* {rec.theta_star:.6g} (true {rec.theta_true:.6g})  {rec.wall_clock:.1f} s")
        for name, p in sorted(rec.artifacts.items()):
            print(f"  {name}: {p}")
        return 0
    print(f"{cell.tag}: failed in stage {rec.failure_stage}\n{rec.diagnostics}", file=sys.stderr)
    return 1


def cmd_sweep(args):
    cfg = _config(args)
    records = run_sweep(cfg)
    failed = [r for r in records if not r.ok]
    print(f"{len(records)} runs, {len(failed)} failed; results in {cfg['output']['dir']}")
    for r in failed:
        print(f"  {r.cell.tag}: {r.failure_stage}: {r.diagnostics.splitlines()[0]}", file=sys.stderr)
    return 1 if failed else 0


def cmd_export(args):
    try:
        records = read_records(args.results)
    except OSError as exc:
        raise ConfigError(f"cannot read results: {exc}") from exc
    fams = FAMILIES if args.family == "all" else (args.family,)
    out = args.out or os.path.join(args.results if os.path.isdir(args.results) else ".", "plots")
    for p in export_plots(records, out, fams):
        print(p)
    return 0


def cmd_verify(args):
    from .verify import run_checks

    return 0 if run_checks() else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="sbiwss", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single cell and write all artifacts")
    p.add_argument("--config", help="YAML config (defaults used when omitted)")
    p.add_argument("--Re", type=float, default=1000.0)
    p.add_argument("--kappa", type=float, default=0.2)
    p.add_argument("--vpd", type=float, default=9)
    p.add_argument("--mesh", default="fine")
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--seed", type=int, help="noise seed (default: derived from the master seed)")
    p.add_argument("--out")
    p.add_argument("--master-seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the configured sweep")
    p.add_argument("config", nargs="?", help="YAML config (defaults used when omitted)")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--master-seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="write plot-data tables from sweep results")
    p.add_argument("results", help="sweep output directory or records.jsonl")
    p.add_argument("--family", choices=FAMILIES + ("all",), default="all")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("verify", help="run the quick oracle suite")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
