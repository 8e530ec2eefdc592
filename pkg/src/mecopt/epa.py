"""Equal power allocation: one transmit power per user, shared by all of its subcarriers.

With the high-SNR approximation log2(1 + p g) ~ log2(p g) the rate
requirement turns into the simple lower bound ``pbar >= 2**nbar``, so each user
is left with a scalar problem on the box ``[2**nbar, p_max/|N_k|]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DeadlineExhausted, InfeasibleWindow, NoSubcarriers, StalledLineSearch
from .model import Scenario
from .power import (PowerDuals, PowerOptions, SumRatioAux, TraceRecord, UplinkProblem,
                    aux_from_power, damped_newton_step, fixed_point_residual, rate_numerator_d,
                    solve_power, uplink_energy)

LN2 = math.log(2.0)


def nbar(scenario: Scenario, lam, mec_cpu, assign) -> np.ndarray:
    """Exponent of the equal-power lower bound, per user (0 for users that do not offload)."""
    lam = np.asarray(lam, dtype=float)
    f = np.asarray(mec_cpu, dtype=float)
    x = np.asarray(assign, dtype=bool)
    off = lam > 0
    count = x.sum(axis=1)
    if np.any(off & (count == 0)):
        raise NoSubcarriers(f"offloading users {np.flatnonzero(off & (count == 0)).tolist()} own no subcarrier")
    lam_bits = lam * scenario.bits
    with np.errstate(divide="ignore", invalid="ignore"):
        t_up = np.where(off, scenario.deadline - lam_bits * scenario.cycles / np.where(off, f, 1.0), np.inf)
    if np.any(off & ~(t_up > 0)):
        raise DeadlineExhausted(f"MEC execution alone exceeds the deadline for users {np.flatnonzero(off & ~(t_up > 0)).tolist()}")
    need = np.where(off, lam_bits / (scenario.bandwidth * t_up), 0.0)
    log_gain = np.sum(np.where(x, np.log2(scenario.gains), 0.0), axis=1)
    return np.where(off, (need - log_gain) / np.maximum(count, 1), 0.0)


def epa_window(scenario: Scenario, lam, mec_cpu, assign) -> tuple[np.ndarray, np.ndarray]:
    """Box ``[2**nbar, p_max/|N_k|]`` for every user."""
    count = np.asarray(assign, dtype=bool).sum(axis=1)
    lower = np.exp2(nbar(scenario, lam, mec_cpu, assign))
    upper = np.where(count > 0, scenario.p_max / np.maximum(count, 1), 0.0)
    return lower, upper


def epa_stationarity(pbar, a, b, budget_dual, rate_dual, lam_bits, gains, bandwidth):
    """Derivative of the per-user Lagrangian in the common power.

    ``gains`` holds the user's subcarrier gains along the last axis.
    """
    gains = np.asarray(gains, dtype=float)
    n = gains.shape[-1]
    pbar = np.asarray(pbar, dtype=float)
    pull = np.sum(gains / ((1.0 + pbar[..., None] * gains) * LN2), axis=-1)
    out = b * n * lam_bits + budget_dual - rate_dual - a * b * bandwidth * pull
    return out if np.ndim(out) else float(out)


def solve_pbar(a, b, budget_dual, rate_dual, lam_bits, gains, bandwidth, lower, upper, iters: int = 200):
    """Root of :func:`epa_stationarity` in ``[lower, upper]``; a boundary when there is none inside.

    Works on a single user (1-D ``gains``) or a batch (``gains`` of shape (K, N)
    with NaN marking subcarriers the user does not own).
    """
    gains = np.atleast_2d(np.asarray(gains, dtype=float))
    owned = np.isfinite(gains)
    g = np.where(owned, gains, 0.0)
    scalar = np.ndim(lower) == 0
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    a, b, budget_dual, rate_dual, lam_bits = (np.broadcast_to(np.asarray(v, dtype=float), lower.shape)
                                              for v in (a, b, budget_dual, rate_dual, lam_bits))
    n = owned.sum(axis=1)

    def slope(p):
        pull = np.sum(g / ((1.0 + p[:, None] * g) * LN2), axis=1)
        return b * n * lam_bits + budget_dual - rate_dual - a * b * bandwidth * pull

    lo, hi = lower.copy(), upper.copy()
    at_lo = slope(lo) >= 0
    at_hi = slope(hi) <= 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = slope(mid) > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
        if np.all(hi - lo <= 1e-15 * np.maximum(hi, 1e-300)):
            break
    p = np.where(at_lo, lower, np.where(at_hi, upper, 0.5 * (lo + hi)))
    return float(p[0]) if scalar else p


def pbar_equal_gain(a, b, budget_dual, rate_dual, lam_bits, gain, count, bandwidth):
    """Closed form when every subcarrier of the user has the same gain."""
    den = (b * lam_bits * count + budget_dual - rate_dual) * LN2
    with np.errstate(divide="ignore"):
        p = np.where(den > 0, a * b * bandwidth * count / den - 1.0 / gain, np.inf)
    p = np.maximum(p, 0.0)
    return p if np.ndim(p) else float(p)


def pbar_high_snr(a, b, budget_dual, rate_dual, lam_bits, count, bandwidth):
    """Closed form in the high-SNR regime (gain-independent)."""
    den = (b * lam_bits * count + budget_dual - rate_dual) * LN2
    with np.errstate(divide="ignore"):
        p = np.where(den > 0, a * b * bandwidth * count / den, np.inf)
    p = np.maximum(p, 0.0)
    return p if np.ndim(p) else float(p)


@dataclass
class EpaResult:
    power: np.ndarray
    pbar: np.ndarray
    nbar: np.ndarray
    aux: SumRatioAux
    duals: PowerDuals
    trace: list = field(default_factory=list)
    iterations: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    fallback_users: list = field(default_factory=list)
    problem: UplinkProblem | None = None

    def energy(self) -> float:
        return float(np.sum(uplink_energy(self.power, self.problem)))


def solve_epa(scenario: Scenario, lam, mec_cpu, assign, p_init=None, eps1: float = 1e-5,
              max_aux: int = 100, fallback: bool = True, options: PowerOptions | None = None) -> EpaResult:
    """Equal-power counterpart of :func:`mecopt.power.solve_power`.

    The auxiliary pair ``(a, b)`` is driven to its fixed point by damped Newton
    steps exactly as in the per-subcarrier solver; for given ``(a, b)`` each
    user's common power solves its stationarity equation on the box, and the
    box multipliers are read off from the sign of the slope at the active end.

    Users whose box is empty are handed to the per-subcarrier solver when
    ``fallback`` is set; otherwise :class:`InfeasibleWindow` is raised.
    """
    opts = options or PowerOptions()
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(assign, dtype=bool)
    K = scenario.num_users
    problem = UplinkProblem.build(scenario, lam, mec_cpu, x)
    nb = nbar(scenario, lam, mec_cpu, x)
    lower, upper = epa_window(scenario, lam, mec_cpu, x)
    act = problem.active
    empty = act & (lower > upper)
    flags: list[str] = []
    fallback_users = np.flatnonzero(empty).tolist()
    if fallback_users and not fallback:
        raise InfeasibleWindow(f"equal-power window empty for users {fallback_users}")

    base = np.where(x, np.asarray(p_init, dtype=float), 0.0) if p_init is not None else np.zeros(x.shape)
    lam_epa = np.where(empty, 0.0, lam)
    prob = UplinkProblem.build(scenario, lam_epa, mec_cpu, x)
    users = prob.active
    gains_nan = np.where(prob.mask, scenario.gains, np.nan)
    trace: list[TraceRecord] = []
    counts = {"aux": 0}

    def powers_for(aux):
        pb = solve_pbar(aux.a, aux.b, 0.0, 0.0, prob.lam_bits, gains_nan, scenario.bandwidth,
                        np.where(users, lower, 0.0), np.where(users, upper, 0.0))
        pb = np.where(users, pb, 0.0)
        return np.where(prob.mask, pb[:, None], 0.0), pb

    def resolve(aux):
        p, pb = powers_for(aux)
        return p, pb

    pbar_now = np.where(users, upper, 0.0)
    power = np.where(prob.mask, pbar_now[:, None], 0.0)
    aux = aux_from_power(power, prob) if users.any() else SumRatioAux(np.zeros(K), np.zeros(K))
    if users.any():
        power, pbar_now = powers_for(aux)
        for i in range(1, max_aux + 1):
            counts["aux"] = i
            W = fixed_point_residual(aux, power, prob)
            w_norm = float(np.linalg.norm(W))
            d = rate_numerator_d(prob.lam_bits, power, prob.mask)
            rel = float(np.max(np.abs(W[:K][users]) / np.maximum(d[users], 1e-300)))
            trace.append(TraceRecord("aux", i, float(np.sum(uplink_energy(power, prob))), w_norm))
            if w_norm <= eps1 and rel <= eps1:
                break
            try:
                step = damped_newton_step(aux, power, prob, resolve, opts.rho, opts.z, opts.max_halvings)
            except StalledLineSearch:
                flags.append("stalled_line_search")
                break
            aux, power, pbar_now = step.aux, step.power, step.extra

    # box multipliers from the slope at the chosen point
    slope = np.zeros(K)
    if users.any():
        g0 = np.where(prob.mask, scenario.gains, 0.0)
        pull = np.sum(g0 / ((1.0 + pbar_now[:, None] * g0) * LN2), axis=1)
        slope = aux.b * prob.mask.sum(axis=1) * prob.lam_bits - aux.a * aux.b * scenario.bandwidth * pull
    budget = np.where(users & np.isclose(pbar_now, upper, rtol=1e-12, atol=0), np.maximum(-slope, 0.0), 0.0)
    rate = np.where(users & np.isclose(pbar_now, lower, rtol=1e-12, atol=0), np.maximum(slope, 0.0), 0.0)
    duals = PowerDuals(budget, rate)

    result = np.where(x, base, 0.0)
    result = np.where(users[:, None], power, result)
    if fallback_users:
        lam_fb = np.where(empty, lam, 0.0)
        fb = solve_power(scenario, lam_fb, mec_cpu, x, p_init=p_init, options=opts)
        result = np.where(empty[:, None], fb.power, result)
        flags.append("window_fallback")
    result = np.where(x, result, 0.0)
    return EpaResult(result, pbar_now, nb, aux, duals, trace, counts, flags, fallback_users, problem)
