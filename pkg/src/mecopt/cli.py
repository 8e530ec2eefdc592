"""Command line: ``mecopt solve``, ``mecopt sweep``, ``mecopt plot``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, Params, load_experiment, load_params
from .driver import VARIANTS, SolverOptions, solve
from .errors import MecError
from .scenario import gen_scenario


def _params(args) -> Params:
    params = load_params(args.config)
    if args.users is not None:
        params = params.with_(num_users=args.users)
    if args.subcarriers is not None:
        params = params.with_(num_subcarriers=args.subcarriers)
    return params


def cmd_solve(args) -> int:
    params = _params(args)
    scenario = gen_scenario(params, args.seed)
    try:
        report = solve(scenario, args.variant, SolverOptions.from_params(params), trace=args.trace)
    except MecError as exc:
        print(json.dumps({"variant": args.variant, "infeasible": True, "error": str(exc)}))
        return 2
    summary = report.summary()
    summary.update(seed=args.seed, users=params.num_users, subcarriers=params.num_subcarriers)
    text = json.dumps(summary, indent=2, default=float)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(text + "\n")
        if args.trace:
            with open(out / "trace.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["outer", "energy_j"])
                for z, e in enumerate(report.objective_trace):
                    w.writerow([z, repr(float(e))])
            with open(out / "blocks.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, ["outer", "block", "energy", "accepted"], lineterminator="\n")
                w.writeheader()
                w.writerows(report.block_trace)
    return 0


def cmd_sweep(args) -> int:
    from .sweep import run_sweep

    config = load_experiment(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.variant:
        changes["variants"] = tuple(args.variant)
    if args.no_timing:
        changes["timing"] = False
    base = config.base
    if args.users is not None:
        base = base.with_(num_users=args.users)
    if args.subcarriers is not None:
        base = base.with_(num_subcarriers=args.subcarriers)
    if args.full:
        base = base.with_(num_subcarriers=512)
    config = dataclasses.replace(config, base=base, **changes)
    rows, _ = run_sweep(config, args.out)
    for r in rows:
        print(f"{r['sweep_var']}={r['sweep_value']:<10g} {r['variant']:<4} E={r['mean_energy_j']:.4e} J "
              f"(+-{r['std_energy_j']:.2e}) infeasible={r['infeasible_count']}")
    return 0


def cmd_plot(args) -> int:
    from .plot import plot_sweep

    out = plot_sweep(args.csv, args.out, log_y=not args.linear)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mecopt", description="Energy-minimal partial offloading over OFDMA")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one random scenario")
    s.add_argument("--variant", choices=VARIANTS, default="pa")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--users", type=int)
    s.add_argument("--subcarriers", type=int)
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--trace", action="store_true", help="write per-iteration energy and block decisions")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="run a parameter sweep from a config file")
    w.add_argument("--config")
    w.add_argument("--seeds", type=int)
    w.add_argument("--workers", type=int)
    w.add_argument("--variant", action="append", choices=VARIANTS)
    w.add_argument("--users", type=int)
    w.add_argument("--subcarriers", type=int)
    w.add_argument("--full", action="store_true", help="use N=512 subcarriers")
    w.add_argument("--no-timing", action="store_true", help="write 0 wall time so output is byte-reproducible")
    w.add_argument("--out", default="results")
    w.set_defaults(func=cmd_sweep)

    g = sub.add_parser("plot", help="plot a sweep CSV")
    g.add_argument("csv")
    g.add_argument("--out", default="sweep.svg")
    g.add_argument("--linear", action="store_true", help="linear energy axis")
    g.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
