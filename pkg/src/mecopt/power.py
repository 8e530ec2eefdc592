"""Uplink power allocation for fixed offloading ratios, CPU shares and subcarriers.

The uplink energy sum_k p_k lambda_k R_k / r_k(p_k) is a sum of ratios.  It is
handled with the parametric reformulation: for auxiliary ``(a, b)`` the
weighted difference ``b (d(p) - a h(p))`` is minimised in closed form under a
first-order (tangent) model of the rate requirement, the multipliers of the
power budget and of the linearised rate requirement are found in the dual, and
``(a, b)`` are driven to the fixed point ``b = 1/h``, ``a = d/h`` with a damped
Newton iteration.  The tangent expansion point is then moved to the new powers
until it stops changing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (DeadlineExhausted, InfeasibleDeadline, MaxIterations,
                     NoSubcarriers, StalledLineSearch)
from .model import Scenario

LN2 = math.log(2.0)
_TINY = 1e-300


@dataclass
class SumRatioAux:
    a: np.ndarray
    b: np.ndarray

    def copy(self) -> "SumRatioAux":
        return SumRatioAux(self.a.copy(), self.b.copy())


@dataclass
class PowerDuals:
    budget: np.ndarray  # sum_n p <= p_max
    rate: np.ndarray    # linearised rate requirement

    @classmethod
    def zeros(cls, num_users: int) -> "PowerDuals":
        return cls(np.zeros(num_users), np.zeros(num_users))


@dataclass
class ScaState:
    point: np.ndarray   # expansion point, zero off the user's subcarriers
    offset: np.ndarray  # o_k, bits/s/Hz
    coef: np.ndarray    # g / ((1 + p_r g) ln 2), zero off the user's subcarriers


@dataclass(frozen=True)
class TraceRecord:
    level: str
    iteration: int
    objective: float
    w_norm: float = float("nan")
    dual_residual: float = float("nan")


@dataclass(frozen=True)
class PowerOptions:
    eps1: float = 1e-5
    eps2: float = 1e-5
    max_dual: int = 500
    max_aux: int = 100
    max_sca: int = 50
    sca_patience: int = 5
    dual_method: str = "exact"
    step_budget: float = 1e-4
    step_rate: float = 1e-8
    rho: float = 0.5
    z: float = 0.1
    max_halvings: int = 20
    bisection_iters: int = 100


@dataclass
class UplinkProblem:
    """Per-user data the power stage needs, restricted to offloading users."""

    lam_bits: np.ndarray   # lambda_k R_k
    gains: np.ndarray
    mask: np.ndarray       # subcarriers owned by offloading users
    bandwidth: float
    p_max: np.ndarray
    required: np.ndarray   # lambda R / (B T_u), bits/s/Hz
    active: np.ndarray

    @property
    def inv_gain(self) -> np.ndarray:
        if getattr(self, "_inv_gain", None) is None:
            self._inv_gain = 1.0 / self.gains
        return self._inv_gain

    @classmethod
    def build(cls, scenario: Scenario, lam, mec_cpu, assign) -> "UplinkProblem":
        lam = np.asarray(lam, dtype=float)
        mec_cpu = np.asarray(mec_cpu, dtype=float)
        assign = np.asarray(assign, dtype=bool)
        active = lam > 0
        lam_bits = lam * scenario.bits
        if np.any(active & ~assign.any(axis=1)):
            bad = np.flatnonzero(active & ~assign.any(axis=1)).tolist()
            raise NoSubcarriers(f"offloading users {bad} own no subcarrier")
        t_up = np.full(scenario.num_users, np.inf)
        with np.errstate(divide="ignore"):
            t_up[active] = scenario.deadline - lam_bits[active] * scenario.cycles[active] / mec_cpu[active]
        if np.any(active & ~(t_up > 0)):
            bad = np.flatnonzero(active & ~(t_up > 0)).tolist()
            raise DeadlineExhausted(f"MEC execution alone exceeds the deadline for users {bad}")
        required = np.where(active, lam_bits / (scenario.bandwidth * t_up), 0.0)
        return cls(lam_bits, np.asarray(scenario.gains), assign & active[:, None], scenario.bandwidth,
                   scenario.p_max.copy(), required, active)


# ------------------------------------------------------------ ratio pieces

def rate_numerator_d(lam_bits, power, mask) -> np.ndarray:
    """d_k = lambda_k R_k sum_n p_kn over the user's subcarriers."""
    return np.asarray(lam_bits) * np.sum(np.where(mask, power, 0.0), axis=-1)


def rate_denominator_h(power, gains, mask, bandwidth: float) -> np.ndarray:
    """h_k = B sum_n log2(1 + p_kn g_kn) over the user's subcarriers."""
    return bandwidth * np.sum(np.where(mask, np.log2(1.0 + np.where(mask, power, 0.0) * gains), 0.0), axis=-1)


def sca_constants(problem: UplinkProblem, point: np.ndarray) -> ScaState:
    """Tangent model of sum_n log2(1 + p g) >= required around ``point``."""
    mask = problem.mask
    point = np.where(mask, point, 0.0)
    coef = np.where(mask, problem.gains / ((1.0 + point * problem.gains) * LN2), 0.0)
    log_term = np.where(mask, np.log2(1.0 + point * problem.gains), 0.0)
    offset = problem.required + np.sum(coef * point - log_term, axis=1)
    offset = np.where(problem.active, offset, 0.0)
    return ScaState(point=point, offset=offset, coef=coef)


def taylor_rate(power, point, gains) -> np.ndarray:
    """First-order expansion of log2(1 + p g) at ``point`` (elementwise)."""
    return np.log2(1.0 + point * gains) + gains * (power - point) / ((1.0 + point * gains) * LN2)


# ------------------------------------------------------------ closed forms

def inner_power(a, b, budget_dual, rate_dual, lam_bits, gain, point, bandwidth, cap=np.inf):
    """Minimiser of the per-subcarrier Lagrangian.

    Where the denominator is non-positive the Lagrangian decreases without
    bound in p, and the power is pinned to ``cap``.
    """
    a, b, budget_dual, rate_dual, lam_bits, gain, point = np.broadcast_arrays(
        *map(np.asarray, (a, b, budget_dual, rate_dual, lam_bits, gain, point)))
    den = (b * lam_bits + budget_dual) * LN2 - rate_dual * gain / (1.0 + point * gain)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = a * b * bandwidth / den - 1.0 / gain
    p = np.where(den > 0, p, np.inf)
    p = np.clip(p, 0.0, cap)
    return p if p.ndim else float(p)


def high_gain_power(a, b, budget_dual, rate_dual, lam_bits, point, bandwidth):
    """Limit of :func:`inner_power` for an unbounded channel gain."""
    rate_dual = np.asarray(rate_dual, dtype=float)
    point = np.asarray(point, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        pull = np.where(rate_dual != 0, rate_dual / point, 0.0)
        den = (b * lam_bits + budget_dual) * LN2 - pull
        p = np.where(den > 0, a * b * bandwidth / den, np.inf)
    p = np.maximum(p, 0.0)
    return p if np.ndim(p) else float(p)


def lagrangian_derivative(p, a, b, budget_dual, rate_dual, lam_bits, gain, point, bandwidth):
    """d/dp of the per-subcarrier Lagrangian."""
    return (b * lam_bits - a * b * bandwidth * gain / ((1.0 + p * gain) * LN2)
            + budget_dual - rate_dual * gain / ((1.0 + point * gain) * LN2))


# ------------------------------------------------------------ dual updates

def update_power_duals(duals: PowerDuals, power, sca: ScaState, p_max, mask,
                       step_budget: float, step_rate: float) -> PowerDuals:
    """Projected subgradient ascent on the budget and linearised-rate multipliers."""
    tx = np.sum(np.where(mask, power, 0.0), axis=1)
    lin = np.sum(sca.coef * np.where(mask, power, 0.0), axis=1)
    budget = np.maximum(duals.budget + step_budget * (tx - p_max), 0.0)
    rate = np.maximum(duals.rate + step_rate * (sca.offset - lin), 0.0)
    return PowerDuals(budget, rate)


def _powers(problem: UplinkProblem, sca: ScaState, aux: SumRatioAux, budget, rate) -> np.ndarray:
    """:func:`inner_power` for every pair at once (callers silence divide warnings)."""
    den = ((aux.b * problem.lam_bits + budget) * LN2)[:, None] - rate[:, None] * (sca.coef * LN2)
    p = (aux.a * aux.b * problem.bandwidth)[:, None] / den - problem.inv_gain
    p[~(den > 0)] = np.inf
    np.clip(p, 0.0, problem.p_max[:, None], out=p)
    p[~problem.mask] = 0.0
    return p


def _rate_residual(problem, sca, p):
    return sca.offset - np.sum(sca.coef * p, axis=1)


def _root_decreasing(fun, lo, hi, f_lo, f_hi, todo, xtol=1e-15, ftol=1e-13, max_iter=200):
    """Vectorised bracketed root of decreasing functions (Illinois false position).

    Returns the right end of the final bracket, where ``fun <= 0``.
    """
    lo, hi, f_lo, f_hi = lo.copy(), hi.copy(), f_lo.copy(), f_hi.copy()
    scale = np.maximum(np.abs(f_lo), 1e-300)
    side = np.zeros(lo.shape, dtype=np.int8)
    todo = todo.copy()
    for _ in range(max_iter):
        if not todo.any():
            break
        x = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        x = np.where((x > lo) & (x < hi), x, 0.5 * (lo + hi))
        fx = fun(x)
        right = todo & (fx <= 0)
        left = todo & ~right
        f_lo = np.where(right & (side == 1), 0.5 * f_lo, f_lo)
        f_hi = np.where(left & (side == -1), 0.5 * f_hi, f_hi)
        hi = np.where(right, x, hi)
        f_hi = np.where(right, fx, f_hi)
        lo = np.where(left, x, lo)
        f_lo = np.where(left, fx, f_lo)
        side = np.where(right, 1, np.where(left, -1, side)).astype(np.int8)
        todo &= ~((hi - lo <= xtol * hi) | (-f_hi <= ftol * scale))
    return hi


def _solve_rate_dual(problem, sca, aux, budget, ftol=1e-13, max_iter=100):
    """Per-user rate multiplier at a fixed budget multiplier.

    Safeguarded Newton on the linearised rate residual, which is decreasing
    (and concave away from the power caps) in the multiplier; steps leaving
    the current bracket fall back to bisection.
    """
    K = problem.active.size
    zero = np.zeros(K)
    p0 = _powers(problem, sca, aux, budget, zero)
    r0 = _rate_residual(problem, sca, p0)
    need = problem.active & (r0 > 0)
    if not need.any():
        return zero, p0, np.zeros(K, dtype=bool)
    pull = sca.coef * LN2
    base = (aux.b * problem.lam_bits + budget) * LN2
    num = aux.a * aux.b * problem.bandwidth
    sat = np.where(problem.mask, base[:, None] / pull, 0.0)
    hi = np.where(need, np.max(np.where(np.isfinite(sat), sat, 0.0), axis=1) * (1.0 + 1e-9) + _TINY, 0.0)
    r_hi = _rate_residual(problem, sca, _powers(problem, sca, aux, budget, hi))
    stuck = need & (r_hi > 0)
    todo = need & ~stuck
    lo = zero.copy()
    x, fx, p = zero.copy(), r0, p0
    scale = np.maximum(r0, 1e-300)
    for _ in range(max_iter):
        if not todo.any():
            break
        den = base[:, None] - x[:, None] * pull
        interior = problem.mask & (p > 0) & (p < problem.p_max[:, None])
        dp = np.where(interior, num[:, None] * pull / den ** 2, 0.0)
        slope = -np.sum(sca.coef * dp, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - fx / slope
        step = np.where((step > lo) & (step < hi) & (slope < 0), step, 0.5 * (lo + hi))
        x = np.where(todo, step, x)
        p = _powers(problem, sca, aux, budget, x)
        fx = _rate_residual(problem, sca, p)
        right = todo & (fx <= 0)
        hi = np.where(right, x, hi)
        lo = np.where(todo & ~right, x, lo)
        todo &= ~((right & (-fx <= ftol * scale)) | (hi - lo <= 1e-15 * hi))
    rate = np.where(need & ~stuck, hi, np.where(stuck, hi, 0.0))
    return rate, _powers(problem, sca, aux, budget, rate), stuck


def solve_power_duals_exact(problem: UplinkProblem, sca: ScaState, aux: SumRatioAux, iters: int = 100):
    """Maximise the dual function user by user.

    The rate multiplier is the root of the linearised rate residual; if the
    power budget is then violated the budget multiplier is found from the
    budget residual, re-solving the rate multiplier at each trial.  Both roots
    are bracketed (the residuals are monotone in their multiplier).  Returns
    ``(power, duals, infeasible_mask)``.
    """
    K = problem.active.size
    budget = np.zeros(K)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate, p, stuck = _solve_rate_dual(problem, sca, aux, budget)
        excess0 = np.sum(p, axis=1) - problem.p_max
        over = problem.active & (excess0 > problem.p_max * 1e-12)
        if over.any():
            def excess(phi):
                return np.sum(_solve_rate_dual(problem, sca, aux, phi)[1], axis=1) - problem.p_max
            hi = np.where(over, aux.b * problem.lam_bits + 1.0 / np.maximum(problem.p_max, _TINY), 0.0)
            e_hi = excess(hi)
            for _ in range(200):
                grow = over & (e_hi > 0)
                if not grow.any() or np.max(hi) > 1e300:
                    break
                hi = np.where(grow, hi * 4.0, hi)
                e_hi = excess(hi)
            budget = _root_decreasing(excess, np.zeros(K), hi, excess0, e_hi, over & (e_hi <= 0),
                                      ftol=1e-12, max_iter=iters)
            budget = np.where(over, budget, 0.0)
            rate, p, stuck = _solve_rate_dual(problem, sca, aux, budget)
    return p, PowerDuals(budget, rate), stuck


def solve_power_duals_subgradient(problem, sca, aux, duals0: PowerDuals, opts: PowerOptions):
    duals = PowerDuals(duals0.budget.copy(), duals0.rate.copy())
    it = 0
    for it in range(1, opts.max_dual + 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            p = _powers(problem, sca, aux, duals.budget, duals.rate)
        new = update_power_duals(duals, p, sca, problem.p_max, problem.mask, opts.step_budget, opts.step_rate)
        change = max(np.max(np.abs(new.budget - duals.budget)), np.max(np.abs(new.rate - duals.rate)))
        scale = max(np.max(new.budget), np.max(new.rate), 1e-300)
        duals = new
        if change <= opts.eps1 * scale:
            break
    with np.errstate(divide="ignore", invalid="ignore"):
        p = _powers(problem, sca, aux, duals.budget, duals.rate)
    return p, duals, it


# ------------------------------------------------------------ fixed point

def fixed_point_residual(aux: SumRatioAux, power, problem: UplinkProblem) -> np.ndarray:
    """W = (a h - d, b h - 1) stacked over offloading users."""
    h = rate_denominator_h(power, problem.gains, problem.mask, problem.bandwidth)
    d = rate_numerator_d(problem.lam_bits, power, problem.mask)
    act = problem.active
    return np.concatenate([np.where(act, aux.a * h - d, 0.0), np.where(act, aux.b * h - 1.0, 0.0)])


def residual_W(aux: SumRatioAux, power, problem: UplinkProblem) -> float:
    return float(np.linalg.norm(fixed_point_residual(aux, power, problem)))


def aux_from_power(power, problem: UplinkProblem) -> SumRatioAux:
    h = rate_denominator_h(power, problem.gains, problem.mask, problem.bandwidth)
    d = rate_numerator_d(problem.lam_bits, power, problem.mask)
    act = problem.active & (h > 0)
    safe = np.where(act, h, 1.0)
    return SumRatioAux(np.where(act, d / safe, 0.0), np.where(act, 1.0 / safe, 0.0))


@dataclass
class AuxStep:
    aux: SumRatioAux
    tau: float
    power: np.ndarray
    w_norm: float
    extra: object = None


def damped_newton_step(aux: SumRatioAux, power, problem: UplinkProblem,
                       resolve: Callable[[SumRatioAux], tuple] | None = None,
                       rho: float = 0.5, z: float = 0.1, max_halvings: int = 20) -> AuxStep:
    """One damped-Newton update of ``(a, b)``.

    The Jacobian of W in ``(a, b)`` is diagonal with entries ``h_k``, so the
    Newton direction is ``(d/h - a, 1/h - b)``.  With ``resolve`` the residual
    of a trial step is measured at the powers re-optimised for that trial;
    without it the powers are held fixed.
    """
    w0 = residual_W(aux, power, problem)
    if w0 == 0.0:
        return AuxStep(aux.copy(), 0.0, power, 0.0)
    target = aux_from_power(power, problem)
    da, db = target.a - aux.a, target.b - aux.b
    for l in range(max_halvings + 1):
        tau = rho ** l
        trial = SumRatioAux(aux.a + tau * da, aux.b + tau * db)
        extra = None
        p_trial = power
        if resolve is not None:
            p_trial, extra = resolve(trial)
        w = residual_W(trial, p_trial, problem)
        if w <= (1.0 - z * tau) * w0:
            return AuxStep(trial, tau, p_trial, w, extra)
    raise StalledLineSearch(f"no step in rho**0..rho**{max_halvings} reduced |W| = {w0:.3e}")


def update_aux(aux: SumRatioAux, power, problem: UplinkProblem, resolve=None,
               rho: float = 0.5, z: float = 0.1, max_halvings: int = 20) -> SumRatioAux:
    return damped_newton_step(aux, power, problem, resolve, rho, z, max_halvings).aux


# ------------------------------------------------------------ driver

def uplink_energy(power, problem: UplinkProblem) -> np.ndarray:
    h = rate_denominator_h(power, problem.gains, problem.mask, problem.bandwidth)
    d = rate_numerator_d(problem.lam_bits, power, problem.mask)
    return np.where(problem.active & (h > 0), d / np.where(h > 0, h, 1.0), 0.0)


def _scale_to_rate(problem: UplinkProblem, power, target, users) -> np.ndarray:
    """Per-user factor s with sum_n log2(1 + s p g) = target (bisection)."""
    K = power.shape[0]
    def rate_at(s):
        # the doubling search may overshoot to inf, which log2 handles
        with np.errstate(over="ignore", invalid="ignore"):
            return np.sum(np.where(problem.mask, np.log2(1.0 + s[:, None] * power * problem.gains), 0.0), axis=1)
    lo = np.zeros(K)
    hi = np.ones(K)
    for _ in range(2100):
        short = users & (rate_at(hi) < target)
        if not short.any():
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, hi * 2.0, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = rate_at(mid) < target
        lo = np.where(users & below, mid, lo)
        hi = np.where(users & ~below, mid, hi)
        if np.all((hi - lo) <= 1e-15 * hi):
            break
    return np.where(users, hi, 1.0)


def default_power(scenario: Scenario, assign) -> np.ndarray:
    """p_max split equally over each user's subcarriers."""
    assign = np.asarray(assign, dtype=bool)
    n = assign.sum(axis=1)
    share = np.where(n > 0, scenario.p_max / np.maximum(n, 1), 0.0)
    return np.where(assign, share[:, None], 0.0)


@dataclass
class PowerResult:
    power: np.ndarray
    aux: SumRatioAux
    duals: PowerDuals
    sca: ScaState
    trace: list = field(default_factory=list)
    iterations: dict = field(default_factory=dict)
    converged: bool = False
    w_norm: float = 0.0
    flags: list = field(default_factory=list)
    problem: UplinkProblem | None = None
    last_power: np.ndarray | None = None    # SCA iterate paired with ``aux`` (before polishing)

    def energy(self) -> float:
        return float(np.sum(uplink_energy(self.power, self.problem)))


def _aux_converged(aux, power, problem, eps1) -> tuple[bool, float]:
    W = fixed_point_residual(aux, power, problem)
    norm = float(np.linalg.norm(W))
    d = rate_numerator_d(problem.lam_bits, power, problem.mask)
    K = problem.active.size
    act = problem.active & (d > 0)
    rel_a = float(np.max(np.abs(W[:K][act]) / d[act])) if act.any() else 0.0
    return norm <= eps1 and rel_a <= eps1, norm


def solve_power(scenario: Scenario, lam, mec_cpu, assign, p_init=None,
                eps1: float | None = None, eps2: float | None = None,
                options: PowerOptions | None = None) -> PowerResult:
    """Minimise total uplink energy over the powers of offloading users.

    Users with zero offloading ratio are left untouched.  The returned powers
    meet the exact rate requirement (hence the deadline) of every offloading
    user and its power budget.
    """
    opts = options or PowerOptions()
    eps1 = opts.eps1 if eps1 is None else eps1
    eps2 = opts.eps2 if eps2 is None else eps2
    problem = UplinkProblem.build(scenario, lam, mec_cpu, assign)
    assign = np.asarray(assign, dtype=bool)
    act = problem.active
    base = default_power(scenario, assign) if p_init is None else np.where(assign, np.asarray(p_init, float), 0.0)
    K = scenario.num_users

    result_power = base.copy()
    if not act.any():
        empty = ScaState(np.zeros_like(base), np.zeros(K), np.zeros_like(base))
        return PowerResult(result_power, SumRatioAux(np.zeros(K), np.zeros(K)), PowerDuals.zeros(K), empty,
                           converged=True, problem=problem, iterations={"sca": 0, "aux": 0, "dual": 0})

    # start from the initial shape scaled to meet the rate requirement exactly
    start = np.where(problem.mask, base, 0.0)
    dead = act & ~np.any(start > 0, axis=1)
    if dead.any():
        start = np.where(dead[:, None] & problem.mask, default_power(scenario, assign), start)
    s = _scale_to_rate(problem, start, problem.required, act)
    start = start * s[:, None]
    tx = np.sum(start, axis=1)
    if np.any(act & (tx > problem.p_max * (1.0 + 1e-9))):
        bad = np.flatnonzero(act & (tx > problem.p_max * (1.0 + 1e-9))).tolist()
        raise InfeasibleDeadline(f"users {bad} cannot reach the required uplink rate within p_max")

    trace: list[TraceRecord] = []
    flags: list[str] = []
    counts = {"sca": 0, "aux": 0, "dual": 0}
    duals = PowerDuals.zeros(K)

    def make_resolve(sca):
        def resolve(trial_aux):
            nonlocal duals
            if opts.dual_method == "exact":
                p, d, stuck = solve_power_duals_exact(problem, sca, trial_aux, opts.bisection_iters)
                if stuck.any() and "linearised_rate_unreachable" not in flags:
                    flags.append("linearised_rate_unreachable")
                counts["dual"] += 1
            else:
                p, d, n = solve_power_duals_subgradient(problem, sca, trial_aux, duals, opts)
                counts["dual"] += n
            return p, d
        return resolve

    def polish(p):
        """Rescale each user onto the exact rate requirement; energy is inf where that breaks the budget."""
        live = act & np.any(np.where(problem.mask, p, 0.0) > 0, axis=1)
        scale = _scale_to_rate(problem, p, problem.required * (1.0 + 1e-12), live)
        # a huge scale (rate out of reach) overflows to inf and is rejected below
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            q = p * scale[:, None]
            e = uplink_energy(q, problem)
        ok = live & (np.sum(q, axis=1) <= problem.p_max) & np.isfinite(e)
        return q, np.where(ok, e, np.inf)

    best = start.copy()
    best_e = np.where(act, uplink_energy(start, problem), 0.0)
    point = start
    sca = sca_constants(problem, point)
    aux = aux_from_power(point, problem)
    p_star = point
    w_norm = np.inf
    converged = False
    idle = 0
    for r in range(1, opts.max_sca + 1):
        counts["sca"] = r
        sca = sca_constants(problem, point)
        resolve = make_resolve(sca)
        aux = aux_from_power(point, problem)
        p_star, duals = resolve(aux)
        for i in range(1, opts.max_aux + 1):
            counts["aux"] += 1
            done, w_norm = _aux_converged(aux, p_star, problem, eps1)
            trace.append(TraceRecord("aux", i, float(np.sum(uplink_energy(p_star, problem))), w_norm,
                                     float(np.max(np.abs(np.minimum(_rate_residual(problem, sca, p_star), 0)), initial=0.0))))
            if done:
                break
            try:
                step = damped_newton_step(aux, p_star, problem, resolve, opts.rho, opts.z, opts.max_halvings)
            except StalledLineSearch:
                flags.append("stalled_line_search")
                break
            aux, p_star, duals = step.aux, step.power, step.extra
        if np.any(act & ~np.isfinite(np.sum(p_star, axis=1))):
            raise MaxIterations("power iteration diverged")
        change = float(np.max(np.abs(p_star - point)))
        scale = float(np.max(np.abs(point)))
        q, e = polish(p_star)
        better = act & (e < best_e * (1.0 - 1e-9))
        if better.any():
            best[better] = q[better]
            best_e = np.where(better, e, best_e)
            idle = 0
        else:
            idle += 1
        trace.append(TraceRecord("sca", r, float(np.sum(best_e)), w_norm, change))
        point = p_star
        if change <= eps2 * max(scale, _TINY):
            converged = True
            break
        if idle >= opts.sca_patience:
            flags.append("sca_stalled")
            break

    result_power = np.where(act[:, None], best, result_power)
    result_power = np.where(assign, result_power, 0.0)
    _, w_norm = _aux_converged(aux, p_star, problem, eps1)
    if not converged and "sca_stalled" not in flags:
        flags.append("sca_not_converged")
    return PowerResult(result_power, aux, duals, sca, trace, counts, converged, w_norm, flags, problem, p_star)
