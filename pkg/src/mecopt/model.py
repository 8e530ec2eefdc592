"""System model: latency and energy of partial offloading over OFDMA.

All powers are in watts, rates in bits/s, CPU speeds in cycles/s.  Channel
gains stored on a :class:`Scenario` are already normalised by the noise power
(``g / sigma**2``), so ``p * gain`` is the per-subcarrier SNR.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InfeasibleOffload

RTOL = 1e-9


@dataclass(frozen=True)
class UserTask:
    input_bits: float
    cycles_per_bit: float
    deadline: float
    local_cpu: float
    max_power: float
    kappa_local: float

    def __post_init__(self):
        for name in ("input_bits", "cycles_per_bit", "deadline", "local_cpu", "max_power", "kappa_local"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class Scenario:
    """One slot of the network: K users, N subcarriers, one MEC server."""

    tasks: tuple[UserTask, ...]
    gains: np.ndarray
    bandwidth: float
    mec_capacity: float
    kappa_mec: float
    noise: float = 1e-13

    def __post_init__(self):
        tasks = tuple(self.tasks)
        object.__setattr__(self, "tasks", tasks)
        gains = np.array(self.gains, dtype=float, copy=True)
        if gains.ndim != 2 or gains.shape[0] != len(tasks):
            raise ValueError(f"gains must have shape (K, N) with K={len(tasks)}, got {gains.shape}")
        if not np.all(gains > 0):
            raise ValueError("normalised channel gains must be positive")
        gains.setflags(write=False)
        object.__setattr__(self, "gains", gains)
        if self.bandwidth <= 0 or self.mec_capacity <= 0 or self.kappa_mec <= 0:
            raise ValueError("bandwidth, mec_capacity and kappa_mec must be positive")
        deadlines = {t.deadline for t in tasks}
        if len(deadlines) > 1:
            raise ValueError("all users share one slot deadline T")

    @property
    def num_users(self) -> int:
        return len(self.tasks)

    @property
    def num_subcarriers(self) -> int:
        return self.gains.shape[1]

    @property
    def underloaded(self) -> bool:
        """True when there are fewer subcarriers than users (N < K)."""
        return self.num_subcarriers < self.num_users

    @property
    def deadline(self) -> float:
        return self.tasks[0].deadline

    def _vec(self, name: str) -> np.ndarray:
        v = np.array([getattr(t, name) for t in self.tasks], dtype=float)
        v.setflags(write=False)
        return v

    @cached_property
    def bits(self) -> np.ndarray:
        return self._vec("input_bits")

    @cached_property
    def cycles(self) -> np.ndarray:
        return self._vec("cycles_per_bit")

    @cached_property
    def local_cpu(self) -> np.ndarray:
        return self._vec("local_cpu")

    @cached_property
    def p_max(self) -> np.ndarray:
        return self._vec("max_power")

    @cached_property
    def kappa_local(self) -> np.ndarray:
        return self._vec("kappa_local")

    def replace_tasks(self, **changes) -> "Scenario":
        """Copy with every task's fields overridden by ``changes``."""
        return replace(self, tasks=tuple(replace(t, **changes) for t in self.tasks))


@dataclass
class Allocation:
    """Decision variables: offloading ratio, powers, MEC CPU shares, subcarrier map."""

    lam: np.ndarray
    power: np.ndarray
    mec_cpu: np.ndarray
    assign: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.power = np.asarray(self.power, dtype=float)
        self.mec_cpu = np.asarray(self.mec_cpu, dtype=float)
        assign = np.asarray(self.assign)
        # non-binary input is kept as-is so check_feasibility can flag it
        if assign.dtype != bool and np.all((assign == 0) | (assign == 1)):
            assign = assign.astype(bool)
        self.assign = assign

    @classmethod
    def empty(cls, num_users: int, num_subcarriers: int) -> "Allocation":
        return cls(
            lam=np.zeros(num_users),
            power=np.zeros((num_users, num_subcarriers)),
            mec_cpu=np.zeros(num_users),
            assign=np.zeros((num_users, num_subcarriers), dtype=bool),
        )

    def copy(self) -> "Allocation":
        return Allocation(self.lam.copy(), self.power.copy(), self.mec_cpu.copy(), self.assign.copy())


@dataclass(frozen=True)
class ConstraintCheck:
    ok: bool
    residual: float


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-constraint outcome; ``residual`` > 0 is the size of a violation."""

    lambda_bounds: ConstraintCheck
    latency: ConstraintCheck
    power_budget: ConstraintCheck
    cpu_nonneg: ConstraintCheck
    cpu_capacity: ConstraintCheck
    exclusivity: ConstraintCheck
    binary: ConstraintCheck
    checks: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "checks", {
            "lambda_bounds": self.lambda_bounds,
            "latency": self.latency,
            "power_budget": self.power_budget,
            "cpu_nonneg": self.cpu_nonneg,
            "cpu_capacity": self.cpu_capacity,
            "exclusivity": self.exclusivity,
            "binary": self.binary,
        })

    @property
    def overall(self) -> bool:
        return all(c.ok for c in self.checks.values())

    def violated(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.ok]


# ---------------------------------------------------------------- scalar forms

def local_latency(task: UserTask, lam: float) -> float:
    return task.cycles_per_bit * (1.0 - lam) * task.input_bits / task.local_cpu


def transmission_rate(scenario: Scenario, allocation: Allocation, k: int) -> float:
    return float(rates(scenario, allocation.power, allocation.assign)[k])


def offload_latency(task: UserTask, lam: float, rate: float, mec_cpu: float) -> float:
    if lam == 0:
        return 0.0
    if rate <= 0 or mec_cpu <= 0:
        raise InfeasibleOffload(f"lambda={lam} needs a positive rate and MEC share (r={rate}, f={mec_cpu})")
    bits = lam * task.input_bits
    return bits / rate + bits * task.cycles_per_bit / mec_cpu


def total_latency(scenario: Scenario, allocation: Allocation, k: int) -> float:
    task = scenario.tasks[k]
    lam = float(allocation.lam[k])
    r = transmission_rate(scenario, allocation, k)
    return max(local_latency(task, lam), offload_latency(task, lam, r, float(allocation.mec_cpu[k])))


def local_energy(task: UserTask, lam: float) -> float:
    return task.kappa_local * task.cycles_per_bit * (1.0 - lam) * task.input_bits * task.local_cpu ** 2


def offload_energy(scenario: Scenario, allocation: Allocation, k: int) -> float:
    task = scenario.tasks[k]
    lam = float(allocation.lam[k])
    if lam == 0:
        return 0.0
    r = transmission_rate(scenario, allocation, k)
    if r <= 0:
        raise InfeasibleOffload(f"user {k} offloads with zero uplink rate")
    tx_power = float(np.sum(allocation.power[k] * allocation.assign[k]))
    bits = lam * task.input_bits
    return tx_power * bits / r + scenario.kappa_mec * bits * task.cycles_per_bit * allocation.mec_cpu[k] ** 2


def system_energy(scenario: Scenario, allocation: Allocation) -> float:
    return float(np.sum(user_energies(scenario, allocation)))


# ----------------------------------------------------------- vectorised forms

def rates(scenario: Scenario, power: np.ndarray, assign: np.ndarray) -> np.ndarray:
    """Per-user aggregate uplink rate B * sum_n x log2(1 + p g)."""
    snr = np.where(assign, power, 0.0) * scenario.gains
    return scenario.bandwidth * np.sum(np.log2(1.0 + snr), axis=1)


def latencies(scenario: Scenario, allocation: Allocation) -> np.ndarray:
    """Per-user completion time; +inf where an offloading user has no rate or CPU."""
    lam = allocation.lam
    t_local = scenario.cycles * (1.0 - lam) * scenario.bits / scenario.local_cpu
    r = rates(scenario, allocation.power, allocation.assign)
    bits = lam * scenario.bits
    with np.errstate(divide="ignore", invalid="ignore"):
        t_off = bits / r + bits * scenario.cycles / allocation.mec_cpu
    t_off = np.where(lam == 0, 0.0, t_off)
    t_off = np.where((lam != 0) & ((r <= 0) | (allocation.mec_cpu <= 0)), np.inf, t_off)
    return np.maximum(t_local, t_off)


def user_energies(scenario: Scenario, allocation: Allocation) -> np.ndarray:
    lam = allocation.lam
    e_local = scenario.kappa_local * scenario.cycles * (1.0 - lam) * scenario.bits * scenario.local_cpu ** 2
    r = rates(scenario, allocation.power, allocation.assign)
    offloading = lam != 0
    if np.any(offloading & (r <= 0)):
        bad = np.flatnonzero(offloading & (r <= 0)).tolist()
        raise InfeasibleOffload(f"users {bad} offload with zero uplink rate")
    tx_power = np.sum(np.where(allocation.assign, allocation.power, 0.0), axis=1)
    bits = lam * scenario.bits
    safe_r = np.where(offloading, r, 1.0)
    e_up = np.where(offloading, tx_power * bits / safe_r, 0.0)
    e_mec = scenario.kappa_mec * bits * scenario.cycles * allocation.mec_cpu ** 2
    return e_local + e_up + e_mec


def _check(residual: float, scale: float, rtol: float) -> ConstraintCheck:
    residual = float(residual)
    return ConstraintCheck(ok=bool(residual <= rtol * max(abs(scale), 1.0)), residual=residual)


def check_feasibility(scenario: Scenario, allocation: Allocation, rtol: float = RTOL) -> FeasibilityReport:
    """Evaluate every constraint of the joint problem; never raises."""
    lam = allocation.lam
    assign_raw = np.asarray(allocation.assign)
    x = assign_raw.astype(bool)
    T = scenario.deadline

    lam_res = float(np.max(np.maximum(lam - 1.0, -lam)))
    lat_res = float(np.max(latencies(scenario, allocation) - T))
    tx = np.sum(np.where(x, allocation.power, 0.0), axis=1)
    pow_res = float(np.max(tx - scenario.p_max))
    # powers on unassigned pairs must be zero
    stray = float(np.max(np.where(x, 0.0, np.abs(allocation.power)), initial=0.0))
    cpu_res = float(np.max(-allocation.mec_cpu))
    cap_res = float(np.sum(allocation.mec_cpu) - scenario.mec_capacity)
    excl_res = float(np.max(np.sum(assign_raw != 0, axis=0)) - 1.0) if x.size else -1.0
    bin_res = float(np.max(np.minimum(np.abs(assign_raw - 0.0), np.abs(assign_raw - 1.0)), initial=0.0))

    return FeasibilityReport(
        lambda_bounds=_check(lam_res, 1.0, rtol),
        latency=_check(lat_res, T, rtol),
        power_budget=ConstraintCheck(
            ok=bool(pow_res <= rtol * max(float(np.max(scenario.p_max)), 1.0) and stray == 0.0),
            residual=max(pow_res, stray),
        ),
        cpu_nonneg=_check(cpu_res, 1.0, rtol),
        cpu_capacity=_check(cap_res, scenario.mec_capacity, rtol),
        exclusivity=_check(excl_res, 1.0, 0.0),
        binary=_check(bin_res, 1.0, 0.0),
    )


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def make_tasks(bits: Sequence[float], cycles: Sequence[float], local_cpu: Sequence[float],
               deadline: float, max_power: float | Sequence[float], kappa_local: float) -> tuple[UserTask, ...]:
    K = len(bits)
    pm = np.broadcast_to(np.asarray(max_power, dtype=float), (K,))
    return tuple(
        UserTask(float(bits[k]), float(cycles[k]), float(deadline), float(local_cpu[k]), float(pm[k]), float(kappa_local))
        for k in range(K)
    )
