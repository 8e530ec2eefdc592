"""Parameter sweeps: one solve per (grid value, seed, variant), averaged over seeds."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, Params, apply_sweep
from .driver import SolverOptions, solve
from .errors import MecError
from .scenario import gen_scenario

log = logging.getLogger(__name__)

COLUMNS = ("sweep_var", "sweep_value", "variant", "seed_count", "mean_energy_j", "std_energy_j",
           "mean_outer_iters", "mean_wall_ms", "infeasible_count", "mean_offload_ratio")
RUN_COLUMNS = ("sweep_var", "sweep_value", "variant", "seed", "energy_j", "outer_iters", "wall_ms",
               "offload_ratio", "feasible", "error")


@dataclass(frozen=True)
class Job:
    sweep_var: str
    value: float
    seed: int
    variant: str
    params: Params
    timing: bool = True


def run_job(job: Job) -> dict:
    params = apply_sweep(job.params, job.sweep_var, job.value)
    row = {"sweep_var": job.sweep_var, "sweep_value": job.value, "variant": job.variant, "seed": job.seed,
           "energy_j": float("nan"), "outer_iters": 0, "wall_ms": 0.0, "offload_ratio": float("nan"),
           "feasible": False, "error": ""}
    try:
        scenario = gen_scenario(params, job.seed)
        report = solve(scenario, job.variant, SolverOptions.from_params(params))
    except MecError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(energy_j=report.energy, outer_iters=report.iterations.get("outer", 0),
               wall_ms=report.wall_time * 1e3 if job.timing else 0.0,
               offload_ratio=report.mean_offload_ratio, feasible=bool(report.feasibility.overall))
    if not report.feasibility.overall:
        row["error"] = "infeasible: " + ",".join(report.feasibility.violated())
    return row


def jobs_for(config: ExperimentConfig) -> list[Job]:
    return [Job(config.sweep_var, float(v), seed, variant, config.base, config.timing)
            for v in config.values for seed in range(config.seeds) for variant in config.variants]


def aggregate(runs: list[dict], config: ExperimentConfig) -> list[dict]:
    """Seed averages per (value, variant), ordered by the grid and then the variant list."""
    rows = []
    for v in config.values:
        for variant in config.variants:
            group = [r for r in runs if r["sweep_value"] == float(v) and r["variant"] == variant]
            ok = [r for r in group if r["feasible"]]
            e = np.array([r["energy_j"] for r in ok], dtype=float)
            rows.append({
                "sweep_var": config.sweep_var,
                "sweep_value": float(v),
                "variant": variant,
                "seed_count": len(group),
                "mean_energy_j": float(e.mean()) if e.size else float("nan"),
                "std_energy_j": float(e.std()) if e.size else float("nan"),
                "mean_outer_iters": float(np.mean([r["outer_iters"] for r in ok])) if ok else float("nan"),
                "mean_wall_ms": float(np.mean([r["wall_ms"] for r in ok])) if ok else float("nan"),
                "infeasible_count": len(group) - len(ok),
                "mean_offload_ratio": float(np.mean([r["offload_ratio"] for r in ok])) if ok else float("nan"),
            })
    return rows


def run_sweep(config: ExperimentConfig, out_dir: str | Path | None = None) -> tuple[list[dict], list[dict]]:
    """Solve every job, average over seeds, and optionally write ``sweep.csv`` and ``runs.csv``."""
    jobs = jobs_for(config)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(run_job, jobs, chunksize=1))
    else:
        runs = [run_job(j) for j in jobs]
    runs.sort(key=lambda r: (config.values.index(r["sweep_value"]) if r["sweep_value"] in config.values else 0,
                             config.variants.index(r["variant"]), r["seed"]))
    rows = aggregate(runs, config)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "sweep.csv", rows, COLUMNS)
        write_csv(out / "runs.csv", runs, RUN_COLUMNS)
    return rows, runs


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str | Path, rows: list[dict], columns=COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("sweep_value", "mean_energy_j", "std_energy_j", "mean_outer_iters", "mean_wall_ms",
                    "mean_offload_ratio"):
            if key in r:
                r[key] = float(r[key])
        for key in ("seed_count", "infeasible_count"):
            if key in r:
                r[key] = int(r[key])
    return rows
