"""Command-line entry point: ``agglio run``, ``agglio grids`` and ``agglio spectrum``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .activations import ActivationSpec
from .data import CovariateScale, GoldSpec, generate_synthetic
from .errors import AgglioError, ConfigError
from .harness import default_grids, emit_summary, load_config, run_experiment
from .theory import safe_temperature, verify_local_spectrum

EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 1, 2


def _seed_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agglio", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment described by a YAML config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--seeds", type=_seed_list, help="comma list or ranges, e.g. 0,1,5-9")
    run.add_argument("--threads", type=int, help="parallel cells")
    run.add_argument("--format", choices=("csv", "json"), default="csv")

    grids = sub.add_parser("grids", help="print the default hyperparameter grids")
    grids.add_argument("--format", choices=("csv", "json"), default="json")

    spec = sub.add_parser("spectrum", help="Hessian eigenvalue ranges around the gold model")
    spec.add_argument("--activation", default="sigmoid")
    spec.add_argument("--n", type=int, default=2000)
    spec.add_argument("--d", type=int, default=20)
    spec.add_argument("--scale", choices=[s.value for s in CovariateScale], default="unit")
    spec.add_argument("--tau", type=_float_list, help="temperatures (default: safe temperature and 1)")
    spec.add_argument("--radius", type=float, default=2.0)
    spec.add_argument("--samples", type=int, default=100)
    spec.add_argument("--seeds", type=_seed_list, default=[0])
    spec.add_argument("--out", default="spectrum")
    spec.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.out:
        config.output = args.out
    if args.seeds:
        config.seeds = args.seeds
    if args.threads:
        config.threads = args.threads
    table = run_experiment(config)
    path = emit_summary(table, args.format, config.output)
    print(f"{len(table)} rows written to {path}")
    for row in table.failures:
        print(f"{row.method} seed={row.seed} {row.hyperparameters}: {row.status}", file=sys.stderr)
    return EXIT_FAILURES if table.failures else EXIT_OK


def _cmd_grids(args) -> int:
    grids = default_grids()
    if args.format == "json":
        print(json.dumps(grids, indent=2))
    else:
        print("method,parameter,values")
        for method, grid in grids.items():
            for key, values in grid.items():
                print(f"{method},{key},\"{' '.join(repr(v) for v in values)}\"")
    return EXIT_OK


def _cmd_spectrum(args) -> int:
    spec = ActivationSpec.parse(args.activation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        ds = generate_synthetic(args.n, GoldSpec(args.d), spec, scale=args.scale, seed=seed)
        gold = ds.w_star / np.linalg.norm(ds.w_star)
        ds = generate_synthetic(args.n, GoldSpec.fixed(gold), spec, scale=args.scale, seed=seed)
        taus = args.tau or [safe_temperature(spec, args.radius, 1.0), 1.0]
        for tau in taus:
            rep = verify_local_spectrum(ds, spec, tau, ds.w_star, args.radius, args.samples, seed)
            stem = f"spectrum_s{seed}_tau{tau:.6g}"
            if args.format == "json":
                rep.to_json(out / f"{stem}.json")
            else:
                rep.to_csv(out / f"{stem}.csv")
            print(f"seed={seed} tau={tau:.6g} lambda_min={rep.lambda_min:.6g} "
                  f"lambda_max={rep.lambda_max:.6g}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "grids": _cmd_grids, "spectrum": _cmd_spectrum}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AgglioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURES


if __name__ == "__main__":
    sys.exit(main())
