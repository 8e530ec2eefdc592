"""MEC CPU shares and subcarrier assignment for fixed ratios and powers.

The allocation stage works in the dual domain with an auxiliary rate
``phi_k <= r_k``.  Given multipliers, the CPU share of each user comes from a
bisection on the (monotone) derivative of the Lagrangian, each subcarrier goes
to the user with the smallest per-subcarrier Lagrangian term, and ``phi`` has a
three-branch closed form.

Pairs ``(k, n)`` that are not currently assigned have no power from the power
stage; a hypothetical power is used to score them (see
:func:`candidate_powers`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivisionGuard, InfeasibleDeadline
from .model import Scenario


@dataclass
class AllocDuals:
    alpha: np.ndarray   # latency
    beta: np.ndarray    # power budget
    delta: np.ndarray   # phi <= r
    gamma: float = 0.0  # sum f <= F

    @classmethod
    def initial(cls, num_users: int) -> "AllocDuals":
        return cls(np.full(num_users, 1e-6), np.full(num_users, 1e-6), np.full(num_users, 1e-6), 1e-16)

    def copy(self) -> "AllocDuals":
        return AllocDuals(self.alpha.copy(), self.beta.copy(), self.delta.copy(), float(self.gamma))


@dataclass(frozen=True)
class AllocOptions:
    method: str = "exact"
    eps3: float = 1e-5
    max_outer: int = 500
    max_inner: int = 50
    tol: float = 1e-9
    step_zeta: float = 1e-6
    step_eta: float = 1e-8
    step_xi: float = 1e-8
    step_theta: float = 1e-15
    local_search: bool = True
    max_passes: int = 20


# ------------------------------------------------------------ Lagrangian

def subcarrier_rates(scenario: Scenario, power) -> np.ndarray:
    """B log2(1 + p g) for every pair."""
    return scenario.bandwidth * np.log2(1.0 + np.asarray(power) * scenario.gains)


def score_subcarrier(power, lam_bits, phi, beta, delta, gain, bandwidth):
    """Per-subcarrier Lagrangian term; broadcasts over pairs."""
    power = np.asarray(power, dtype=float)
    lam_bits = np.asarray(lam_bits, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any((lam_bits > 0) & (phi <= 0)):
        raise DivisionGuard("phi must be positive for an offloading user")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(lam_bits > 0, power * lam_bits / np.where(phi > 0, phi, 1.0), 0.0)
    out = ratio + power * beta - bandwidth * delta * np.log2(1.0 + power * gain)
    return out if out.ndim else float(out)


def subcarrier_scores(scenario: Scenario, lam, cand, phi, duals: AllocDuals) -> np.ndarray:
    lam_bits = np.asarray(lam) * scenario.bits
    return score_subcarrier(cand, lam_bits[:, None], np.asarray(phi)[:, None], duals.beta[:, None],
                            duals.delta[:, None], scenario.gains, scenario.bandwidth)


def user_terms(scenario: Scenario, lam, mec_cpu, phi, duals: AllocDuals) -> np.ndarray:
    """omega_k: everything in the Lagrangian that is not a per-subcarrier term (without -gamma F)."""
    lam = np.asarray(lam, dtype=float)
    f = np.asarray(mec_cpu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    lam_bits = lam * scenario.bits
    off = lam > 0
    if np.any(off & ((phi <= 0) | (f <= 0))):
        raise DivisionGuard("phi and MEC share must be positive for offloading users")
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(off, lam_bits / np.where(off, phi, 1.0) + lam_bits * scenario.cycles / np.where(off, f, 1.0), 0.0)
    return (duals.gamma * f + duals.delta * phi - duals.beta * scenario.p_max
            + scenario.kappa_mec * lam_bits * scenario.cycles * f ** 2
            + duals.alpha * (t - scenario.deadline))


def lagrangian_PS(scenario: Scenario, lam, power, mec_cpu, assign, phi, duals: AllocDuals) -> float:
    """Lagrangian of the allocation problem written term by term."""
    lam = np.asarray(lam, dtype=float)
    f = np.asarray(mec_cpu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    x = np.asarray(assign, dtype=bool)
    lam_bits = lam * scenario.bits
    off = lam > 0
    if np.any(off & ((phi <= 0) | (f <= 0))):
        raise DivisionGuard("phi and MEC share must be positive for offloading users")
    tx = np.sum(np.where(x, power, 0.0), axis=1)
    r = np.sum(np.where(x, subcarrier_rates(scenario, np.where(x, power, 0.0)), 0.0), axis=1)
    safe_phi = np.where(off, phi, 1.0)
    safe_f = np.where(off, f, 1.0)
    objective = np.where(off, tx * lam_bits / safe_phi, 0.0) + scenario.kappa_mec * lam_bits * scenario.cycles * f ** 2
    latency = np.where(off, lam_bits / safe_phi + lam_bits * scenario.cycles / safe_f, 0.0) - scenario.deadline
    value = (np.sum(objective) + np.sum(duals.alpha * latency) + np.sum(duals.beta * (tx - scenario.p_max))
             + np.sum(duals.delta * (phi - r)) + duals.gamma * (np.sum(f) - scenario.mec_capacity))
    return float(value)


def dL_df(f, lam_bits, cycles, alpha, gamma, kappa_mec):
    """Derivative of the Lagrangian in one user's MEC share."""
    return 2.0 * f * kappa_mec * lam_bits * cycles - alpha * cycles * lam_bits / f ** 2 + gamma


def bisect_f(lam_bits: float, cycles: float, alpha: float, gamma: float, kappa_mec: float,
             capacity: float, eps3: float = 1e-5, max_iter: int = 200) -> float:
    """Minimiser of the (convex) Lagrangian over f in [0, capacity].

    Stops once |dL/df| is below ``eps3`` relative to the size of its terms, or
    the bracket has collapsed to machine precision.
    """
    if lam_bits <= 0:
        return 0.0
    if alpha <= 0:
        return 0.0  # derivative is positive on (0, F]
    if dL_df(capacity, lam_bits, cycles, alpha, gamma, kappa_mec) <= 0:
        return float(capacity)
    lo, hi = 0.0, float(capacity)
    f = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = 0.5 * (lo + hi)
        grow = 2.0 * f * kappa_mec * lam_bits * cycles
        pull = alpha * cycles * lam_bits / f ** 2
        d = grow - pull + gamma
        if abs(d) <= eps3 * max(grow, pull, gamma):
            break
        if d > 0:
            hi = f
        else:
            lo = f
        if hi - lo <= 4e-16 * hi:
            break
    return f


def assign_subcarriers(scores) -> np.ndarray:
    """Each subcarrier to the user with the smallest score (lowest index on ties)."""
    scores = np.asarray(scores, dtype=float)
    x = np.zeros(scores.shape, dtype=bool)
    if scores.size:
        x[np.argmin(scores, axis=0), np.arange(scores.shape[1])] = True
    return x


def phi_objective(phi, lam_bits, tx_power, alpha, delta):
    """Per-user objective of the phi subproblem."""
    return (tx_power + alpha) * lam_bits / phi + delta * phi


def optimal_phi(lam_bits: float, cycles: float, mec_cpu: float, alpha: float, delta: float,
                tx_power: float, r_tilde: float, deadline: float) -> float:
    if lam_bits <= 0:
        return float(r_tilde)
    slack = deadline * mec_cpu - lam_bits * cycles
    if slack <= 0:
        raise InfeasibleDeadline(f"MEC share {mec_cpu:.4g} cannot finish {lam_bits:.4g} bits in time")
    phi1 = lam_bits * mec_cpu / slack
    if delta <= 0:
        return float(r_tilde)
    phi_o = math.sqrt((alpha + tx_power) * lam_bits / delta)
    if phi_o < phi1:
        return phi1
    if phi_o <= r_tilde:
        return phi_o
    return float(r_tilde)


def update_alloc_duals(duals: AllocDuals, latency_residual, power_residual, phi_residual,
                       capacity_residual: float, steps: tuple[float, float, float, float]) -> AllocDuals:
    """Projected subgradient ascent: each multiplier moves along its constraint residual."""
    zeta, eta, xi, theta = steps
    return AllocDuals(
        alpha=np.maximum(duals.alpha + zeta * np.asarray(latency_residual), 0.0),
        beta=np.maximum(duals.beta + eta * np.asarray(power_residual), 0.0),
        delta=np.maximum(duals.delta + xi * np.asarray(phi_residual), 0.0),
        gamma=max(duals.gamma + theta * float(capacity_residual), 0.0),
    )


# ------------------------------------------------------------ primal side

def candidate_powers(scenario: Scenario, power, assign) -> np.ndarray:
    """Powers used to score every pair.

    Assigned pairs keep their power.  A pair not yet assigned gets an equal
    share of what is left of the user's budget, spread over all N
    subcarriers, so any assignment respects the budget.
    """
    x = np.asarray(assign, dtype=bool)
    p = np.where(x, np.asarray(power, dtype=float), 0.0)
    spare = np.maximum(scenario.p_max - p.sum(axis=1), 0.0) / scenario.num_subcarriers
    return np.where(x, p, spare[:, None])


@dataclass
class PrimalPoint:
    assign: np.ndarray
    power: np.ndarray
    mec_cpu: np.ndarray
    rate: np.ndarray
    objective: float
    feasible: bool


class _Evaluator:
    """Objective of the allocation stage for a given assignment, with f at its smallest feasible value."""

    def __init__(self, scenario: Scenario, lam, cand):
        self.sc = scenario
        self.lam = np.asarray(lam, dtype=float)
        self.lam_bits = self.lam * scenario.bits
        self.work = self.lam_bits * scenario.cycles
        self.off = self.lam > 0
        self.cand = cand
        self.pair_rate = subcarrier_rates(scenario, cand)

    def user_cost(self, rate, tx, users=None):
        """(cost, f_min) per user from aggregate rate and power; inf when the deadline cannot be met.

        ``users`` (an index array shaped like ``rate``) evaluates arbitrary user/rate pairs.
        """
        T = self.sc.deadline
        off, lam_bits, work = ((self.off, self.lam_bits, self.work) if users is None
                               else (self.off[users], self.lam_bits[users], self.work[users]))
        with np.errstate(divide="ignore", invalid="ignore"):
            t_up = np.where(off, lam_bits / rate, 0.0)
            room = T - t_up
            f = np.where(off, work / room, 0.0)
            cost = np.where(off, tx * t_up + self.sc.kappa_mec * work * f ** 2, 0.0)
        bad = off & ~((room > 0) & (rate > 0))
        cost = np.where(bad, np.inf, cost)
        f = np.where(bad, np.inf, f)
        return cost, f

    def point(self, assign) -> PrimalPoint:
        x = np.asarray(assign, dtype=bool)
        rate = np.sum(np.where(x, self.pair_rate, 0.0), axis=1)
        tx = np.sum(np.where(x, self.cand, 0.0), axis=1)
        cost, f = self.user_cost(rate, tx)
        feasible = bool(np.all(np.isfinite(cost)) and np.sum(f) <= self.sc.mec_capacity)
        return PrimalPoint(x.copy(), np.where(x, self.cand, 0.0), f, rate,
                           float(np.sum(cost)) if feasible else np.inf, feasible)

    def consistent_duals(self, pt: PrimalPoint) -> tuple[AllocDuals, np.ndarray]:
        """Multipliers satisfying stationarity in f and phi at ``pt`` (phi = r)."""
        K = self.sc.num_users
        # users that cannot finish yet are priced as if they had an even CPU share and every subcarrier
        f = np.where(np.isfinite(pt.mec_cpu), pt.mec_cpu, self.sc.mec_capacity / K)
        alpha = np.where(self.off, 2.0 * self.sc.kappa_mec * f ** 3, 0.0)
        tx = np.sum(pt.power, axis=1)
        phi = np.where(pt.rate > 0, pt.rate, np.sum(self.pair_rate, axis=1))
        delta = np.where(self.off, (tx + alpha) * self.lam_bits / phi ** 2, 0.0)
        return AllocDuals(alpha, np.zeros(K), delta, 0.0), phi

    def local_search(self, pt: PrimalPoint, max_passes: int) -> tuple[PrimalPoint, int]:
        """Single-subcarrier moves (to another user or to nobody) while the objective drops."""
        K, N = self.cand.shape
        owner = np.where(pt.assign.any(axis=0), np.argmax(pt.assign, axis=0), -1)
        rate = pt.rate.copy()
        tx = np.sum(pt.power, axis=1)
        count = pt.assign.sum(axis=1)
        cost, f = self.user_cost(rate, tx)
        moves = 0
        for _ in range(max_passes):
            improved = False
            for n in range(N):
                k0 = owner[n]
                # state without subcarrier n
                r_wo, p_wo = rate.copy(), tx.copy()
                if k0 >= 0:
                    # recompute rather than subtract so an emptied user has exactly zero rate
                    r_wo[k0] = 0.0 if count[k0] == 1 else r_wo[k0] - self.pair_rate[k0, n]
                    p_wo[k0] = 0.0 if count[k0] == 1 else p_wo[k0] - self.cand[k0, n]
                base_cost, base_f = self.user_cost(r_wo, p_wo)
                # one candidate per destination user, plus leaving n unassigned
                r_to = r_wo + self.pair_rate[:, n]
                p_to = p_wo + self.cand[:, n]
                to_cost, to_f = self.user_cost(r_to, p_to)
                with np.errstate(invalid="ignore"):
                    sum_base = np.sum(base_cost)
                    sum_base_f = np.sum(base_f)
                    # inf - inf marks moves that leave some user unable to finish
                    options = np.append(sum_base - base_cost + to_cost, sum_base)
                    fopts = np.append(sum_base_f - base_f + to_f, sum_base_f)
                    options = np.where(fopts <= self.sc.mec_capacity, options, np.inf)
                    options = np.where(np.isnan(options), np.inf, options)
                current = float(np.sum(cost))
                best = int(np.argmin(options))
                dest = best if best < K else -1
                if dest != k0 and options[best] < current - 1e-12 * abs(current):
                    if k0 >= 0:
                        count[k0] -= 1
                    if dest >= 0:
                        count[dest] += 1
                    owner[n] = dest
                    # r_to/p_to add n to every user at once; keep it only for dest
                    keep = np.arange(K) == dest
                    rate = np.where(keep, r_to, r_wo)
                    tx = np.where(keep, p_to, p_wo)
                    cost, f = self.user_cost(rate, tx)
                    moves += 1
                    improved = True
            if not improved:
                swap = self._best_swap(owner, rate, tx, cost, f)
                if swap is None:
                    break
                n, m = swap
                u, v = owner[n], owner[m]
                rate[u] += self.pair_rate[u, m] - self.pair_rate[u, n]
                rate[v] += self.pair_rate[v, n] - self.pair_rate[v, m]
                tx[u] += self.cand[u, m] - self.cand[u, n]
                tx[v] += self.cand[v, n] - self.cand[v, m]
                owner[n], owner[m] = v, u
                cost, f = self.user_cost(rate, tx)
                moves += 1
        x = np.zeros_like(pt.assign)
        x[owner[owner >= 0], np.flatnonzero(owner >= 0)] = True
        return self.point(x), moves


    def _best_swap(self, owner, rate, tx, cost, f):
        """Most improving exchange of two subcarriers between their owners, or None."""
        idx = np.flatnonzero(owner >= 0)
        if idx.size < 2:
            return None
        o = owner[idx]
        R, P = self.pair_rate[:, idx], self.cand[:, idx]
        own_r, own_p = R[o, np.arange(idx.size)], P[o, np.arange(idx.size)]
        # user o[i] gives up column i and takes column j
        r_new = rate[o][:, None] - own_r[:, None] + R[o][:, :]
        p_new = tx[o][:, None] - own_p[:, None] + P[o][:, :]
        users = np.broadcast_to(o[:, None], r_new.shape)
        c_new, f_new = self.user_cost(r_new, p_new, users)
        with np.errstate(invalid="ignore"):
            total = c_new + c_new.T - cost[o][:, None] - cost[o][None, :]
            f_tot = np.sum(f) + f_new + f_new.T - f[o][:, None] - f[o][None, :]
        valid = (o[:, None] != o[None, :]) & np.isfinite(total) & (f_tot <= self.sc.mec_capacity)
        current = float(np.sum(cost))
        total = np.where(valid, total, np.inf)
        i, j = np.unravel_index(np.argmin(total), total.shape)
        if not total[i, j] < -1e-12 * abs(current):
            return None
        return int(idx[i]), int(idx[j])


@dataclass
class AllocResult:
    mec_cpu: np.ndarray
    assign: np.ndarray
    power: np.ndarray
    phi: np.ndarray
    duals: AllocDuals
    objective: float
    feasible: bool
    trace: list = field(default_factory=list)
    iterations: dict = field(default_factory=dict)


def repair_assignment(scenario: Scenario, lam, assign) -> np.ndarray:
    """Give every offloading user without a subcarrier its best one from an owner that has several."""
    x = np.asarray(assign, dtype=bool).copy()
    owner = np.where(x.any(axis=0), np.argmax(x, axis=0), -1)
    for k in np.flatnonzero(np.asarray(lam) > 0):
        if np.any(owner == k):
            continue
        counts = np.bincount(owner[owner >= 0], minlength=scenario.num_users)
        spare = np.flatnonzero((owner < 0) | (counts[np.maximum(owner, 0)] > 1))
        if spare.size:
            owner[spare[np.argmax(scenario.gains[k, spare])]] = k
    x[:] = False
    x[owner[owner >= 0], np.flatnonzero(owner >= 0)] = True
    return x


def _recover(evaluator, x, best):
    pt = evaluator.point(x)
    if pt.feasible and (best is None or pt.objective < best.objective):
        return pt
    return best


def solve_alloc(scenario: Scenario, lam, power, assign, mec_cpu=None, duals: AllocDuals | None = None,
                options: AllocOptions | None = None) -> AllocResult:
    """Choose MEC shares and the subcarrier map for fixed ratios and powers.

    ``power``/``assign`` are the current powers and map; unassigned pairs are
    scored with :func:`candidate_powers`.  The returned ``power`` keeps the
    powers of retained pairs and uses the candidate power on new ones.

    ``options.method`` selects how the multipliers are obtained: ``"exact"``
    sets them from stationarity at the current primal point and alternates
    with the assignment rule; ``"subgradient"`` runs the projected subgradient
    iteration with fixed steps.  Either way the best feasible assignment seen
    is kept, its CPU shares are the smallest meeting every deadline, and an
    optional single-move local search polishes it.
    """
    opts = options or AllocOptions()
    K, N = scenario.num_users, scenario.num_subcarriers
    lam = np.asarray(lam, dtype=float)
    x0 = np.asarray(assign, dtype=bool)
    cand = candidate_powers(scenario, power, x0)
    ev = _Evaluator(scenario, lam, cand)
    trace: list[dict] = []
    counts = {"outer": 0, "inner": 0, "moves": 0}

    best = _recover(ev, x0, None)
    if opts.method == "exact":
        pt = ev.point(x0)
        seen = {x0.tobytes()}
        x = x0
        for j in range(1, opts.max_outer + 1):
            counts["outer"] = j
            d, phi = ev.consistent_duals(pt)
            x = assign_subcarriers(subcarrier_scores(scenario, lam, cand, phi, d))
            pt = ev.point(x)
            trace.append({"iteration": j, "objective": pt.objective, "feasible": pt.feasible})
            best = _recover(ev, x, best)
            key = x.tobytes()
            if key in seen:
                break
            seen.add(key)
        final_duals = ev.consistent_duals(best)[0] if best is not None else AllocDuals.initial(K)
    elif opts.method == "subgradient":
        final_duals = _subgradient(scenario, lam, cand, ev, mec_cpu, duals, opts, trace, counts)
        for rec in trace:
            best = _recover(ev, rec.pop("assign"), best)
    else:
        raise ValueError(f"unknown allocation method {opts.method!r}")

    if best is None:
        best = _recover(ev, repair_assignment(scenario, lam, x0), best)
    if best is None:
        # no feasible map found; return the starting map with its minimal CPU shares
        pt = ev.point(x0)
        f = np.where(np.isfinite(pt.mec_cpu), pt.mec_cpu, 0.0)
        return AllocResult(f, x0.copy(), pt.power, pt.rate, final_duals, np.inf, False, trace, counts)

    if opts.local_search:
        best, moves = ev.local_search(best, opts.max_passes)
        counts["moves"] = moves
    phi = np.where(lam > 0, best.rate, 0.0)
    return AllocResult(best.mec_cpu.copy(), best.assign, best.power, phi, final_duals,
                       best.objective, True, trace, counts)


def _subgradient(scenario, lam, cand, ev, mec_cpu, duals, opts, trace, counts):
    K = scenario.num_users
    lam_bits = lam * scenario.bits
    T, F = scenario.deadline, scenario.mec_capacity
    d = duals.copy() if duals is not None else AllocDuals.initial(K)
    f = np.full(K, F / K) if mec_cpu is None else np.asarray(mec_cpu, dtype=float).copy()
    x = assign_subcarriers(-scenario.gains)
    phi = np.sum(np.where(x, ev.pair_rate, 0.0), axis=1)
    steps = (opts.step_zeta, opts.step_eta, opts.step_xi, opts.step_theta)
    prev_dual = -np.inf
    for j in range(1, opts.max_outer + 1):
        counts["outer"] = j
        value = np.inf
        for i in range(opts.max_inner):
            counts["inner"] += 1
            f = np.array([bisect_f(lam_bits[k], scenario.cycles[k], d.alpha[k], d.gamma, scenario.kappa_mec,
                                   F, opts.eps3) for k in range(K)])
            safe_phi = np.where(phi > 0, phi, np.maximum(np.sum(ev.pair_rate, axis=1), 1.0))
            x = assign_subcarriers(subcarrier_scores(scenario, lam, cand, safe_phi, d))
            r_tilde = np.sum(np.where(x, ev.pair_rate, 0.0), axis=1)
            tx = np.sum(np.where(x, cand, 0.0), axis=1)
            new_phi = np.empty(K)
            for k in range(K):
                try:
                    new_phi[k] = optimal_phi(lam_bits[k], scenario.cycles[k], f[k], d.alpha[k], d.delta[k],
                                             tx[k], r_tilde[k], T)
                except InfeasibleDeadline:
                    new_phi[k] = r_tilde[k]
            phi = np.where(new_phi > 0, new_phi, r_tilde)
            try:
                new_value = lagrangian_PS(scenario, lam, cand, np.maximum(f, 1e-300), x, np.maximum(phi, 1e-300), d)
            except DivisionGuard:
                new_value = np.inf
            if abs(new_value - value) <= opts.tol * max(abs(new_value), 1e-300):
                value = new_value
                break
            value = new_value
        trace.append({"iteration": j, "objective": value, "assign": x.copy()})
        off = lam > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            lat = np.where(off, lam_bits / phi + lam_bits * scenario.cycles / f, 0.0) - T
        lat = np.where(np.isfinite(lat), lat, T)
        r_tilde = np.sum(np.where(x, ev.pair_rate, 0.0), axis=1)
        tx = np.sum(np.where(x, cand, 0.0), axis=1)
        new = update_alloc_duals(d, lat, tx - scenario.p_max, phi - r_tilde, float(np.sum(f) - F), steps)
        change = max(np.max(np.abs(new.alpha - d.alpha)), np.max(np.abs(new.beta - d.beta)),
                     np.max(np.abs(new.delta - d.delta)), abs(new.gamma - d.gamma))
        scale = max(np.max(new.alpha), np.max(new.beta), np.max(new.delta), new.gamma, 1e-300)
        d = new
        if change <= opts.eps3 * scale and np.isfinite(value) and abs(value - prev_dual) <= opts.tol * abs(value):
            break
        prev_dual = value
    return d
