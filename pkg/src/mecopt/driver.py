"""Block-coordinate descent over (ratio, power, CPU + subcarriers) and the reference baselines.

Each outer iteration updates the offloading ratios in closed form, then the
uplink powers, then the MEC shares and subcarrier map, and finally re-balances
power against MEC share per user for the fixed map (see :mod:`mecopt.joint`).  A block's output is
kept only if the joint allocation stays feasible and the total energy does
not go up, so the recorded energy sequence is nonincreasing.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .alloc import AllocOptions, solve_alloc
from .epa import solve_epa
from .joint import joint_block
from .errors import InfeasibleDeadline, InfeasibleScenario, MecError
from .model import Allocation, FeasibilityReport, Scenario, check_feasibility, rates, system_energy
from .offload import lambda_interval, optimal_lambdas
from .power import PowerOptions, default_power, solve_power

log = logging.getLogger(__name__)

VARIANTS = ("pa", "epa", "fr", "lc")


@dataclass(frozen=True)
class SolverOptions:
    z_max: int = 600
    eps: float = 1e-5
    power: PowerOptions = field(default_factory=PowerOptions)
    alloc: AllocOptions = field(default_factory=AllocOptions)
    joint_refine: bool = True

    @classmethod
    def from_params(cls, params) -> "SolverOptions":
        return cls(z_max=params.z_max, eps=params.eps, power=params.power_options(), alloc=params.alloc_options())


@dataclass
class SolveReport:
    variant: str
    allocation: Allocation
    energy: float
    objective_trace: list
    iterations: dict
    feasibility: FeasibilityReport
    wall_time: float
    converged: bool
    infeasible: bool = False
    message: str = ""
    block_trace: list = field(default_factory=list)

    @property
    def mean_offload_ratio(self) -> float:
        return float(np.mean(self.allocation.lam))

    def summary(self) -> dict:
        return {
            "variant": self.variant,
            "energy_j": self.energy,
            "outer_iterations": self.iterations.get("outer", 0),
            "converged": self.converged,
            "feasible": self.feasibility.overall,
            "infeasible": self.infeasible,
            "mean_offload_ratio": self.mean_offload_ratio,
            "wall_time_s": self.wall_time,
            "iterations": dict(self.iterations),
            "message": self.message,
        }


def initial_allocation(scenario: Scenario) -> Allocation:
    """Starting point for the outer loop.

    Each subcarrier goes to the user with the best gain (users left empty
    take their best subcarrier from an owner with several), powers are the
    budget split equally, and each MEC share is the smallest one that would
    let the whole task finish in time at that rate (capped at F/K).
    """
    K, N = scenario.num_users, scenario.num_subcarriers
    x = np.zeros((K, N), dtype=bool)
    owner = np.argmax(scenario.gains, axis=0)
    # users left without a subcarrier take their best one from an owner that has several
    for k in np.argsort(-scenario.gains.max(axis=1), kind="stable"):
        if np.any(owner == k):
            continue
        counts = np.bincount(owner, minlength=K)
        spare = np.flatnonzero(counts[owner] > 1)
        if spare.size:
            owner[spare[np.argmax(scenario.gains[k, spare])]] = k
    x[owner, np.arange(N)] = True
    p = default_power(scenario, x)
    r = rates(scenario, p, x)
    share = scenario.mec_capacity / K
    with np.errstate(divide="ignore", invalid="ignore"):
        room = scenario.deadline - np.where(r > 0, scenario.bits / r, np.inf)
        need = scenario.bits * scenario.cycles / room
    f = np.where((room > 0) & (need < share), need, share)
    return Allocation(np.zeros(K), p, f, x)


def _feasible(scenario, alloc) -> bool:
    return check_feasibility(scenario, alloc).overall


def _energy(scenario, alloc) -> float:
    try:
        return system_energy(scenario, alloc)
    except MecError:
        return np.inf


def fr_ratios(scenario: Scenario, alloc: Allocation) -> np.ndarray:
    """Midpoint of each user's feasible ratio interval."""
    lam = np.empty(scenario.num_users)
    for k in range(scenario.num_users):
        iv = lambda_interval(scenario, alloc, k)
        if iv.empty:
            raise InfeasibleScenario(f"user {k} has no deadline-feasible offloading ratio")
        lam[k] = min(max(0.5 * (iv.lower + iv.upper), 0.0), 1.0)
    return lam


def _bcd(scenario: Scenario, variant: str, options: SolverOptions, fixed_lam=None, trace: bool = False) -> SolveReport:
    t0 = time.perf_counter()
    alloc = initial_allocation(scenario)
    try:
        alloc.lam = optimal_lambdas(scenario, alloc) if fixed_lam is None else np.asarray(fixed_lam, float)
    except InfeasibleDeadline as exc:
        raise InfeasibleScenario(str(exc)) from exc
    if not _feasible(scenario, alloc):
        raise InfeasibleScenario("no feasible starting allocation: " + ", ".join(check_feasibility(scenario, alloc).violated()))
    energy = _energy(scenario, alloc)
    objective = [energy]
    counts = {"outer": 0, "lambda": 0, "power_sca": 0, "power_aux": 0, "alloc_outer": 0,
              "joint": 0, "rejected_blocks": 0}
    blocks: list[dict] = []
    converged = False

    def consider(candidate: Allocation, name: str) -> None:
        nonlocal alloc, energy
        ok = _feasible(scenario, candidate)
        e = _energy(scenario, candidate) if ok else np.inf
        accepted = ok and e <= energy
        if accepted:
            alloc, energy = candidate, e
        else:
            counts["rejected_blocks"] += 1
        if trace:
            blocks.append({"outer": counts["outer"], "block": name, "energy": e, "accepted": accepted})

    for z in range(1, options.z_max + 1):
        counts["outer"] = z
        start = energy
        if fixed_lam is None:
            cand = alloc.copy()
            try:
                cand.lam = optimal_lambdas(scenario, alloc)
                counts["lambda"] += 1
                consider(cand, "ratio")
            except MecError as exc:
                log.debug("ratio block skipped: %s", exc)

        cand = alloc.copy()
        try:
            if variant == "epa":
                res = solve_epa(scenario, alloc.lam, alloc.mec_cpu, alloc.assign, p_init=alloc.power,
                                eps1=options.power.eps1, options=options.power)
                counts["power_aux"] += res.iterations.get("aux", 0)
            else:
                res = solve_power(scenario, alloc.lam, alloc.mec_cpu, alloc.assign, p_init=alloc.power,
                                  options=options.power)
                counts["power_sca"] += res.iterations.get("sca", 0)
                counts["power_aux"] += res.iterations.get("aux", 0)
            cand.power = res.power
            consider(cand, "power")
        except MecError as exc:
            log.debug("power block skipped: %s", exc)

        cand = alloc.copy()
        try:
            res = solve_alloc(scenario, alloc.lam, alloc.power, alloc.assign, alloc.mec_cpu, options=options.alloc)
            counts["alloc_outer"] += res.iterations.get("outer", 0)
            if res.feasible:
                cand.mec_cpu, cand.assign, cand.power = res.mec_cpu, res.assign, res.power
                consider(cand, "alloc")
        except MecError as exc:
            log.debug("allocation block skipped: %s", exc)

        if options.joint_refine:
            cand = joint_block(scenario, alloc, equal_power=(variant == "epa"))
            counts["joint"] += 1
            if cand is not None:
                consider(cand, "joint")

        objective.append(energy)
        if start - energy <= options.eps * abs(start):
            converged = True
            break

    report = check_feasibility(scenario, alloc)
    return SolveReport(variant, alloc, energy, objective, counts, report, time.perf_counter() - t0,
                       converged, infeasible=not report.overall, block_trace=blocks)


def solve_pa(scenario: Scenario, options: SolverOptions | None = None, trace: bool = False) -> SolveReport:
    """Joint optimisation of ratios, per-subcarrier powers, MEC shares and subcarriers."""
    return _bcd(scenario, "pa", options or SolverOptions(), trace=trace)


def solve_epa_variant(scenario: Scenario, options: SolverOptions | None = None, trace: bool = False) -> SolveReport:
    """As :func:`solve_pa` with one common power per user."""
    return _bcd(scenario, "epa", options or SolverOptions(), trace=trace)


def solve_fr(scenario: Scenario, options: SolverOptions | None = None, trace: bool = False) -> SolveReport:
    """Fixed offloading ratios (midpoint of each feasible interval at the starting point)."""
    start = initial_allocation(scenario)
    lam = fr_ratios(scenario, start)
    return _bcd(scenario, "fr", options or SolverOptions(), fixed_lam=lam, trace=trace)


def solve_lc(scenario: Scenario, options: SolverOptions | None = None, trace: bool = False) -> SolveReport:
    """Everything computed locally."""
    t0 = time.perf_counter()
    alloc = Allocation.empty(scenario.num_users, scenario.num_subcarriers)
    report = check_feasibility(scenario, alloc)
    if not report.latency.ok:
        raise InfeasibleScenario("local computation misses the deadline for some user")
    energy = system_energy(scenario, alloc)
    return SolveReport("lc", alloc, energy, [energy], {"outer": 0}, report, time.perf_counter() - t0, True)


SOLVERS = {"pa": solve_pa, "epa": solve_epa_variant, "fr": solve_fr, "lc": solve_lc}


def solve(scenario: Scenario, variant: str, options: SolverOptions | None = None, trace: bool = False) -> SolveReport:
    try:
        fn = SOLVERS[variant.lower()]
    except KeyError:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}") from None
    return fn(scenario, options, trace=trace)
