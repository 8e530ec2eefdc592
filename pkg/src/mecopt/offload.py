"""Closed-form offloading ratio for fixed powers, CPU shares and subcarriers.

Each user's energy is affine in its ratio, so the optimum sits on one end of
the deadline-feasible interval depending on the sign of the slope.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivisionGuard, InfeasibleDeadline
from .model import Allocation, Scenario, rates


@dataclass(frozen=True)
class LambdaInterval:
    lower: float
    upper: float

    @property
    def empty(self) -> bool:
        return self.lower > self.upper

    def __contains__(self, lam: float) -> bool:
        return self.lower <= lam <= self.upper


def lambda_interval(scenario: Scenario, allocation: Allocation, k: int) -> LambdaInterval:
    task = scenario.tasks[k]
    T = scenario.deadline
    cR = task.cycles_per_bit * task.input_bits
    lower = max(1.0 - T * task.local_cpu / cR, 0.0)
    r = float(rates(scenario, allocation.power, allocation.assign)[k])
    f = float(allocation.mec_cpu[k])
    if r <= 0 or f <= 0:
        # without a rate or MEC share only local execution is possible
        return LambdaInterval(lower, 0.0)
    upper = min(T * r * f / (task.input_bits * f + r * cR), 1.0)
    return LambdaInterval(lower, upper)


def lambda_derivative(scenario: Scenario, allocation: Allocation, k: int) -> float:
    """Slope of the user's energy in its offloading ratio (independent of the ratio)."""
    task = scenario.tasks[k]
    r = float(rates(scenario, allocation.power, allocation.assign)[k])
    if r <= 0:
        raise DivisionGuard(f"user {k} has zero uplink rate")
    R, c = task.input_bits, task.cycles_per_bit
    tx = float(np.sum(np.where(allocation.assign[k], allocation.power[k], 0.0)))
    return (-task.kappa_local * c * R * task.local_cpu ** 2
            + tx * R / r
            + scenario.kappa_mec * c * R * allocation.mec_cpu[k] ** 2)


def optimal_lambda(scenario: Scenario, allocation: Allocation, k: int) -> float:
    interval = lambda_interval(scenario, allocation, k)
    if interval.empty:
        raise InfeasibleDeadline(
            f"user {k}: deadline needs lambda >= {interval.lower:.6g} but offloading allows <= {interval.upper:.6g}")
    r = float(rates(scenario, allocation.power, allocation.assign)[k])
    if r <= 0 or allocation.mec_cpu[k] <= 0:
        return interval.lower
    # zero slope: energy is flat, keep the smaller ratio
    if lambda_derivative(scenario, allocation, k) >= 0:
        return interval.lower
    return interval.upper


def optimal_lambdas(scenario: Scenario, allocation: Allocation) -> np.ndarray:
    return np.array([optimal_lambda(scenario, allocation, k) for k in range(scenario.num_users)])


def asymptotic_lambda(scenario: Scenario, allocation: Allocation, k: int, which: str) -> float:
    """Unclamped limits: ``which='f_mec'`` for an unbounded MEC share, ``'f_local'`` for an unbounded local CPU."""
    task = scenario.tasks[k]
    T = scenario.deadline
    R, c = task.input_bits, task.cycles_per_bit
    if which in ("f_mec", "f_km"):
        return 1.0 - T * task.local_cpu / (c * R)
    if which in ("f_local", "f_k"):
        r = float(rates(scenario, allocation.power, allocation.assign)[k])
        f = float(allocation.mec_cpu[k])
        return T * r * f / (R * f + r * R * c)
    raise ValueError(f"which must be 'f_mec' or 'f_local', got {which!r}")
