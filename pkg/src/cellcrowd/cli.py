"""Command line entry point.

Exit codes: 0 success, 1 a simulation failed, 2 the configuration is invalid.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import OUT_ENV, ConfigError, load_config, output_root

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG = 0, 1, 2


def _run(args) -> int:
    from .experiments import run_single

    cfg = load_config(args.config)
    seed = cfg.params.seed if args.seed is None else args.seed
    out = output_root(args.out, cfg) / f"{Path(args.config).stem}_seed{seed}"
    rec = run_single(cfg, seed=seed, out_dir=out,
                     trajectory=True if args.trajectory else None)
    if not rec.ok:
        print(f"run failed: {rec.error} (partial output in {out})", file=sys.stderr)
        return EXIT_RUN_FAILED
    t = rec.tails
    print(f"{out}: phi={t['phi']:.4f} vbar={t['vbar']:.4f} phi_rot={t['phi_rot']:.4f} "
          f"({rec.wall_seconds:.1f} s)")
    return EXIT_OK


def _sweep(args) -> int:
    from .experiments import run_sweep

    cfg = load_config(args.config)
    if not cfg.axes:
        raise ConfigError(f"{args.config}: a sweep needs at least one [[sweep.axis]]")
    out = output_root(args.out, cfg) / Path(args.config).stem

    def progress(n, total):
        if not args.quiet:
            print(f"\r{n}/{total} runs", end="", file=sys.stderr, flush=True)

    info = run_sweep(cfg, out, jobs=args.jobs, progress=progress)
    if not args.quiet:
        print(file=sys.stderr)
    print(f"{out / 'summary.csv'}: {info['n_points']} points x {info['n_reps']} reps, "
          f"{info.get('n_failed', 0)} failed")
    return EXIT_RUN_FAILED if info.get("n_failed") else EXIT_OK


def _plot(args) -> int:
    from .plots import emit_plots

    path = Path(args.table)
    if not path.is_file():
        print(f"no such file: {path}", file=sys.stderr)
        return EXIT_CONFIG
    for f in emit_plots(path, args.out):
        print(f)
    return EXIT_OK


def _validate(args) -> int:
    cfg = load_config(args.config)
    p = cfg.params
    from .geometry import density

    print(f"ok: {type(cfg.domain.shape).__name__}, {len(cfg.domain.obstacles)} obstacle(s), "
          f"N={p.n_cells} (density {density(p.n_cells, p.R0, cfg.domain):.3f}), "
          f"{p.n_steps} steps, {len(cfg.axes)} sweep axes, {cfg.n_reps} reps")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cellcrowd",
        description="Simulate self-propelled cells with hard contacts.",
        epilog=f"Output goes under --out, else output.dir in the config, else ${OUT_ENV}, "
               f"else ./runs.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one simulation")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--trajectory", action="store_true", help="also write trajectory.csv")
    p.set_defaults(func=_run)

    p = sub.add_parser("sweep", help="Cartesian sweep with replicates")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=_sweep)

    p = sub.add_parser("plot", help="SVG figures from a summary or metrics CSV")
    p.add_argument("table")
    p.add_argument("--out")
    p.set_defaults(func=_plot)

    p = sub.add_parser("validate", help="check a configuration without running it")
    p.add_argument("config")
    p.set_defaults(func=_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
