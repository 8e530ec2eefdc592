"""Joint per-user refinement of uplink power and MEC share for a fixed subcarrier map.

The power block and the CPU/subcarrier block each leave the other's deadline
tight, so plain alternation can stop at a point where trading a little more
MEC speed for a lower uplink rate (or the reverse) would still pay off.  For
fixed ratios and subcarriers the uplink part of a user's energy only depends
on the rate it must reach, and the cheapest way to reach a rate is
water-filling.  That turns the coupled (power, CPU) problem into one scalar
search per user, linked by the shared capacity F through one multiplier.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import Allocation, Scenario


def waterfill_for_rate(gains, spectral_eff: float) -> np.ndarray:
    """Minimum-sum-power powers with sum_n log2(1 + p_n g_n) = spectral_eff.

    ``gains`` are SNR-per-watt values of the user's own subcarriers.
    """
    g = np.asarray(gains, dtype=float)
    p = np.zeros_like(g)
    if spectral_eff <= 0 or g.size == 0:
        return p
    order = np.argsort(-g, kind="stable")
    gs = g[order]
    log_g = np.cumsum(np.log2(gs))
    m_idx = np.arange(1, gs.size + 1)
    # water level 2^{level} for each candidate active-set size m
    level = (spectral_eff - log_g) / m_idx
    valid = level > -np.log2(gs)            # nu > 1/g_m
    m = int(np.flatnonzero(valid)[-1]) + 1
    nu = 2.0 ** level[m - 1]
    p[order[:m]] = np.maximum(nu - 1.0 / gs[:m], 0.0)
    return p


def max_spectral_eff(gains, budget: float) -> float:
    """Largest sum_n log2(1 + p_n g_n) reachable with sum p_n <= budget (classic water-filling)."""
    g = np.sort(np.asarray(gains, dtype=float))[::-1]
    if g.size == 0 or budget <= 0:
        return 0.0
    inv = 1.0 / g
    m_idx = np.arange(1, g.size + 1)
    nu = (budget + np.cumsum(inv)) / m_idx
    m = int(np.flatnonzero(nu > inv)[-1]) + 1
    return float(np.sum(np.log2(nu[m - 1] * g[:m])))


def equal_power_for_rate(gains, spectral_eff: float) -> float:
    """Common power p with sum_n log2(1 + p g_n) = spectral_eff."""
    g = np.asarray(gains, dtype=float)
    if spectral_eff <= 0 or g.size == 0:
        return 0.0
    fn = lambda p: float(np.sum(np.log2(1.0 + p * g))) - spectral_eff
    hi = 1.0
    while fn(hi) < 0:
        hi *= 2.0
    return brentq(fn, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


class UserCurve:
    """Energy of one offloading user as a function of its MEC share."""

    def __init__(self, scenario: Scenario, k: int, lam: float, assign_row, equal_power: bool):
        self.bits = lam * scenario.bits[k]
        self.cycles = scenario.cycles[k]
        self.deadline = scenario.deadline
        self.bandwidth = scenario.bandwidth
        self.kappa_mec = scenario.kappa_mec
        self.idx = np.flatnonzero(assign_row)
        self.g = np.asarray(scenario.gains[k, self.idx], dtype=float)
        self.p_max = float(scenario.p_max[k])
        self.equal_power = equal_power
        if equal_power:
            c_max = float(np.sum(np.log2(1.0 + self.p_max / max(self.g.size, 1) * self.g)))
        else:
            c_max = max_spectral_eff(self.g, self.p_max)
        r_max = self.bandwidth * c_max
        slack = self.deadline - self.bits / r_max if r_max > 0 else -1.0
        # smallest share that still lets the upload fit within the power budget
        self.f_low = self.bits * self.cycles / slack if slack > 0 else np.inf

    def rate_needed(self, f: float) -> float:
        return self.bits / (self.deadline - self.bits * self.cycles / f)

    def powers(self, f: float) -> np.ndarray:
        # tiny margin so the deadline check holds after rounding
        c = self.rate_needed(f) / self.bandwidth * (1.0 + 1e-12)
        if self.equal_power:
            return np.full(self.g.size, equal_power_for_rate(self.g, c))
        return waterfill_for_rate(self.g, c)

    def energy(self, f: float) -> float:
        p = self.powers(f)
        tx = float(p.sum())
        if tx > self.p_max * (1.0 + 1e-12):
            return np.inf
        return tx * self.bits / self.rate_needed(f) + self.kappa_mec * self.bits * self.cycles * f * f

    def best_share(self, mu: float, cap: float, xtol: float) -> float:
        lo = self.f_low
        if not np.isfinite(lo) or lo >= cap:
            return np.nan
        res = minimize_scalar(lambda f: self.energy(f) + mu * f, bounds=(lo, cap), method="bounded",
                              options={"xatol": xtol * cap})
        f = float(res.x)
        return f if np.isfinite(self.energy(f)) else cap


def refine_power_cpu(scenario: Scenario, alloc: Allocation, equal_power: bool = False,
                     xtol: float = 1e-9) -> Allocation | None:
    """Jointly re-optimise powers and MEC shares of offloading users, X and ratios fixed.

    Returns ``None`` when some offloading user cannot meet its deadline on its
    current subcarriers, or the shares that satisfy every user exceed F.
    """
    K = scenario.num_users
    F = scenario.mec_capacity
    users = [k for k in range(K) if alloc.lam[k] > 0]
    curves = {}
    for k in users:
        if not alloc.assign[k].any():
            return None
        curves[k] = UserCurve(scenario, k, float(alloc.lam[k]), alloc.assign[k], equal_power)
    if not users:
        return alloc.copy()
    if sum(c.f_low for c in curves.values()) >= F:
        return None

    def shares(mu):
        return np.array([curves[k].best_share(mu, F, xtol) for k in users])

    f = shares(0.0)
    if np.any(np.isnan(f)):
        return None
    if f.sum() > F:
        excess = lambda mu: float(np.sum(shares(mu))) - F * (1.0 - 1e-12)
        # the marginal MEC energy is tiny in joules per hertz, so start small and grow
        scale = max(curves[k].kappa_mec * curves[k].bits * curves[k].cycles * F for k in users)
        hi = scale
        while excess(hi) > 0:
            hi *= 4.0
            if hi > 1e12 * scale:
                return None
        mu = brentq(excess, 0.0, hi, rtol=1e-12, maxiter=200)
        f = shares(mu)
        if f.sum() > F:
            f *= F / f.sum()
    out = alloc.copy()
    for k, fk in zip(users, f):
        c = curves[k]
        out.mec_cpu[k] = fk
        row = np.zeros(scenario.num_subcarriers)
        row[c.idx] = c.powers(fk)
        out.power[k] = row
    return out


def user_energy(scenario: Scenario, k: int, lam: float, idx, f: float, equal_power: bool = False) -> float:
    """Cheapest offloading energy of user k on subcarriers ``idx`` with MEC share f (inf if out of budget)."""
    if lam <= 0:
        return 0.0
    if len(idx) == 0 or f <= 0:
        return np.inf
    bits = lam * scenario.bits[k]
    slack = scenario.deadline - bits * scenario.cycles[k] / f
    if slack <= 0:
        return np.inf
    rate = bits / slack
    g = scenario.gains[k, idx]
    c = rate / scenario.bandwidth * (1.0 + 1e-12)
    tx = (len(idx) * equal_power_for_rate(g, c)) if equal_power else float(waterfill_for_rate(g, c).sum())
    if tx > scenario.p_max[k] * (1.0 + 1e-12):
        return np.inf
    return tx * bits / rate + scenario.kappa_mec * bits * scenario.cycles[k] * f * f


def improve_assignment(scenario: Scenario, alloc: Allocation, equal_power: bool = False,
                       max_passes: int = 20) -> Allocation:
    """Move single subcarriers between users while that lowers the re-powered energy (shares fixed)."""
    K, N = scenario.num_users, scenario.num_subcarriers
    lam, f = alloc.lam, alloc.mec_cpu
    owner = np.full(N, -1)
    kk, nn = np.nonzero(alloc.assign)
    owner[nn] = kk
    sets = [set(np.flatnonzero(owner == k)) for k in range(K)]
    energy = [user_energy(scenario, k, lam[k], sorted(sets[k]), f[k], equal_power) for k in range(K)]
    takers = [k for k in range(K) if lam[k] > 0]
    for _ in range(max_passes):
        moved = False
        for n in range(N):
            u = owner[n]
            if u >= 0 and lam[u] > 0:
                e_u = user_energy(scenario, u, lam[u], sorted(sets[u] - {n}), f[u], equal_power)
            else:
                e_u = 0.0
            base_u = energy[u] if u >= 0 else 0.0
            best, best_v, best_e = 0.0, -1, 0.0
            for v in takers:
                if v == u:
                    continue
                e_v = user_energy(scenario, v, lam[v], sorted(sets[v] | {n}), f[v], equal_power)
                gain = base_u + energy[v] - e_u - e_v
                if gain > best + 1e-12 * (base_u + energy[v]):
                    best, best_v, best_e = gain, v, e_v
            if best_v >= 0:
                if u >= 0:
                    sets[u].discard(n)
                    energy[u] = e_u
                sets[best_v].add(n)
                energy[best_v] = best_e
                owner[n] = best_v
                moved = True
        if not moved:
            break
    out = alloc.copy()
    out.assign = np.zeros((K, N), dtype=bool)
    mask = owner >= 0
    out.assign[owner[mask], np.flatnonzero(mask)] = True
    out.power = np.where(out.assign, out.power, 0.0)
    return out


def joint_block(scenario: Scenario, alloc: Allocation, equal_power: bool = False) -> Allocation | None:
    """Refine (power, share), improve the map at those shares, then refine again."""
    first = refine_power_cpu(scenario, alloc, equal_power)
    if first is None:
        return None
    moved = improve_assignment(scenario, first, equal_power)
    second = refine_power_cpu(scenario, moved, equal_power)
    return second if second is not None else first
