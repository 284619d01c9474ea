"""Command line entry point: ``python -m exterior_gp <verb> ...``."""
import argparse
import os
import sys

import numpy as np

from .errors import IngestionError
from .experiment import ExperimentConfig, METHODS, read_records_csv, run_nse, run_sweep, show_xi, summarize


def _load(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({}, "<defaults>")
    methods = None
    if getattr(args, "methods", None):
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        unknown = sorted(set(methods) - set(METHODS))
        if unknown:
            raise IngestionError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
    seeds = [args.seed] if getattr(args, "seed", None) is not None else None
    return cfg.with_overrides(seeds=seeds, methods=methods, output_dir=getattr(args, "out", None))


def _progress(done, total):
    print(f"\r{done}/{total} cells", end="" if done < total else "\n", file=sys.stderr, flush=True)


def cmd_sweep(args):
    cfg = _load(args)
    result = run_sweep(cfg, jobs=args.jobs, progress=None if args.quiet else _progress)
    summary = summarize(result)
    summary.to_csv(os.path.join(cfg.output_dir, "summary.csv"))
    text = summary.to_text()
    with open(os.path.join(cfg.output_dir, "summary.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_nse(args):
    cfg = _load(args)
    seeds = [args.seed] if args.seed is not None else None
    grids = run_nse(cfg, frequency=args.freq_hz, seeds=seeds)
    for (array, method, seed), grid in sorted(grids.items(), key=lambda kv: str(kv[0])):
        if array is None:
            continue
        if isinstance(grid, Exception):
            print(f"{array:10s} {method:10s} seed {seed}: failed ({grid})")
        else:
            print(f"{array:10s} {method:10s} seed {seed}: median NSE {np.median(grid.unmasked()):7.2f} dB")
    return 0


def cmd_summarize(args):
    path = os.path.join(args.out, "nmse.csv")
    summary = summarize(read_records_csv(path), split_hz=args.split_hz)
    summary.to_csv(os.path.join(args.out, "summary.csv"))
    text = summary.to_text()
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_validate(args):
    cfg = _load(args)
    print(f"ok {cfg.source} hash={cfg.hash} cells={len(cfg.seeds) * len(cfg.arrays) * len(cfg.frequencies)}")
    return 0


def cmd_show_xi(args):
    print("nu,xi,log10_xi")
    for n, value, lg in show_xi(args.alpha, args.beta, args.nmax):
        print(f"{n},{value!r},{lg!r}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="exterior-gp", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON experiment file (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
        sp.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
        if out:
            sp.add_argument("--out", help="output directory (overrides the config)")

    sp = sub.add_parser("sweep", help="NMSE over the frequency sweep")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("nse", help="NSE maps in the z = 0 plane")
    common(sp)
    sp.add_argument("--freq-hz", type=float, help="frequency of the maps (default from the config)")
    sp.add_argument("--jobs", type=int, default=1, help="accepted for symmetry; maps run serially")
    sp.set_defaults(func=cmd_nse)

    sp = sub.add_parser("summarize", help="mean NMSE and gaps from a finished sweep")
    sp.add_argument("--out", required=True, help="directory holding nmse.csv")
    sp.add_argument("--split-hz", type=float, default=1600.0, help="upper edge of the restricted band")
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("validate-config", help="check a config file and print its hash")
    common(sp, out=False)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("show-xi", help="print the attenuation weight table")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--nmax", type=int, default=20)
    sp.set_defaults(func=cmd_show_xi)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IngestionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
