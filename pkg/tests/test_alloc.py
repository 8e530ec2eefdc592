import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from helpers import small_scenario
from mecopt.alloc import (AllocDuals, AllocOptions, assign_subcarriers, bisect_f, candidate_powers, dL_df,
                          lagrangian_PS, optimal_phi, phi_objective, score_subcarrier, solve_alloc,
                          subcarrier_scores, update_alloc_duals, user_terms)
from mecopt.errors import DivisionGuard, InfeasibleDeadline
from mecopt.model import Allocation, check_feasibility


def golden_min(fn, lo, hi, tol=1e-13):
    inv = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol * max(abs(b), 1e-300):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def random_instance(rng, K=2, N=3, seed=0):
    sc = small_scenario(K=K, N=N, seed=seed)
    lam = rng.uniform(0.2, 1.0, K)
    owner = rng.integers(0, K, N)
    x = np.zeros((K, N), bool)
    x[owner, np.arange(N)] = True
    power = np.where(x, rng.uniform(1e-5, 1e-2, (K, N)), 0.0)
    return sc, lam, power, x


def exhaustive_energy(sc, lam, cand, n_grid=50):
    """Best offloading energy over every owner map (including 'unused') and an f grid per user."""
    K, N = cand.shape
    T, F = sc.deadline, sc.mec_capacity
    lam_bits = lam * sc.bits
    best = np.inf
    for owners in itertools.product(range(-1, K), repeat=N):
        x = np.zeros((K, N), bool)
        for n, k in enumerate(owners):
            if k >= 0:
                x[k, n] = True
        r = sc.bandwidth * np.sum(np.where(x, np.log2(1 + cand * sc.gains), 0.0), axis=1)
        tx = np.sum(np.where(x, cand, 0.0), axis=1)
        if np.any(r <= 0):
            continue
        room = T - lam_bits / r
        if np.any(room <= 0):
            continue
        f_need = lam_bits * sc.cycles / room
        grids = [np.linspace(f_need[k], F, n_grid) for k in range(K)]
        for fs in itertools.product(*grids):
            fs = np.array(fs)
            if fs.sum() > F:
                continue
            e = np.sum(tx * lam_bits / r + sc.kappa_mec * lam_bits * sc.cycles * fs ** 2)
            best = min(best, e)
            break   # grids are increasing, the first admissible point of a product is the cheapest in f
    return best


def test_assignment_is_exhaustive_minimum(rng):
    for _ in range(100):
        L = rng.normal(size=(2, 3))
        x = assign_subcarriers(L)
        best = min(sum(L[o[n], n] for n in range(3)) for o in itertools.product(range(2), repeat=3))
        assert np.sum(L[x]) == pytest.approx(best, abs=1e-14)
        assert np.all(x.sum(axis=0) == 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-12, 1e-3), st.floats(500, 2e3), st.floats(1e2, 1e4))
def test_bisect_f_matches_cube_root(alpha, lam_bits, cycles):
    kappa = 1e-26
    root = (alpha / (2 * kappa)) ** (1 / 3)
    f = bisect_f(lam_bits, cycles, alpha, 0.0, kappa, capacity=10 * root, eps3=1e-5)
    assert f == pytest.approx(root, rel=1e-5)


def test_bisect_f_with_capacity_price(rng):
    for _ in range(100):
        lb, c = rng.uniform(500, 1500), rng.uniform(900, 1100)
        alpha, gamma = 10 ** rng.uniform(-8, -4), 10 ** rng.uniform(-14, -10)
        F = 1e10
        fn = lambda f: dL_df(f, lb, c, alpha, gamma, 1e-26)
        ref = brentq(fn, 1.0, F, xtol=1e-6, rtol=1e-15) if fn(F) > 0 else F
        assert bisect_f(lb, c, alpha, gamma, 1e-26, F, eps3=1e-10) == pytest.approx(ref, rel=1e-6)


def test_bisect_f_edge_cases():
    assert bisect_f(0.0, 1000, 1.0, 0.0, 1e-26, 1e10) == 0.0
    assert bisect_f(1000, 1000, 0.0, 0.0, 1e-26, 1e10) == 0.0
    assert bisect_f(1000, 1000, 1.0, 0.0, 1e-26, 1e6) == 1e6     # root beyond capacity


def test_dL_df_increasing(rng):
    f = np.sort(rng.uniform(1e6, 1e10, (10000, 2)), axis=1)
    args = (rng.uniform(500, 1500, 10000), rng.uniform(900, 1100, 10000), 10 ** rng.uniform(-9, -3, 10000),
            10 ** rng.uniform(-15, -9, 10000), 1e-26)
    assert np.all(dL_df(f[:, 1], *args) >= dL_df(f[:, 0], *args))


def test_optimal_phi_matches_golden_section(rng):
    for _ in range(200):
        lb, c = rng.uniform(500, 1500), rng.uniform(900, 1100)
        T = 0.045
        f = lb * c / T * rng.uniform(1.1, 10)
        alpha, delta, tx = 10 ** rng.uniform(-9, -3), 10 ** rng.uniform(-12, -6), 10 ** rng.uniform(-5, -1)
        phi1 = lb * f / (T * f - lb * c)
        r_tilde = phi1 * rng.uniform(1.01, 100)
        phi = optimal_phi(lb, c, f, alpha, delta, tx, r_tilde, T)
        ref = golden_min(lambda p: phi_objective(p, lb, tx, alpha, delta), phi1, r_tilde)
        assert phi == pytest.approx(ref, rel=1e-4)


def test_phi_objective_convex(rng):
    phi = np.linspace(10.0, 1e5, 2001)
    vals = phi_objective(phi, 1200.0, 1e-3, 1e-6, 1e-9)
    assert np.all(np.diff(vals, 2) >= -1e-12 * np.abs(vals[1:-1]))


def test_optimal_phi_rejects_slow_share():
    with pytest.raises(InfeasibleDeadline):
        optimal_phi(1200.0, 1000.0, 1e6, 1e-6, 1e-9, 1e-3, 1e5, 0.045)


def test_lagrangian_splits_into_pairs_and_users(rng):
    sc, lam, power, x = random_instance(rng, K=3, N=5)
    f = rng.uniform(1e8, 1e9, 3)
    phi = rng.uniform(1e4, 1e5, 3)
    d = AllocDuals(rng.uniform(0, 1e-3, 3), rng.uniform(0, 1e-3, 3), rng.uniform(0, 1e-8, 3), 1e-12)
    scores = subcarrier_scores(sc, lam, power, phi, d)
    split = np.sum(scores[x]) + np.sum(user_terms(sc, lam, f, phi, d)) - d.gamma * sc.mec_capacity
    assert split == pytest.approx(lagrangian_PS(sc, lam, power, f, x, phi, d), rel=1e-10)


def test_score_guards_zero_phi():
    with pytest.raises(DivisionGuard):
        score_subcarrier(1e-3, 1200.0, 0.0, 0.0, 0.0, 1e8, 12.5e3)


def test_dual_update_projects():
    d = update_alloc_duals(AllocDuals.initial(2), [1.0, -1.0], [-1.0, 1.0], [0.5, -0.5], -1.0, (1e-3,) * 4)
    assert d.alpha[0] > 0 and d.alpha[1] == 0.0
    assert d.beta[0] == 0.0 and d.beta[1] > 0
    assert d.gamma == 0.0


def test_candidate_powers_respect_budget(rng):
    sc, lam, power, x = random_instance(rng, K=3, N=6)
    cand = candidate_powers(sc, power, x)
    assert np.all(cand.sum(axis=1) <= sc.p_max * (1 + 1e-12))
    assert np.array_equal(cand[x], power[x])


def test_solve_alloc_matches_exhaustive(rng):
    for seed in range(100):
        sc, lam, power, x = random_instance(rng, seed=seed)
        res = solve_alloc(sc, lam, power, x)
        oracle = exhaustive_energy(sc, lam, candidate_powers(sc, power, x))
        if not np.isfinite(oracle):
            assert not res.feasible
            continue
        assert res.feasible
        assert abs(res.objective - oracle) <= 0.02 * oracle


@pytest.mark.parametrize("method", ["exact", "subgradient"])
def test_solve_alloc_feasible(method, rng):
    sc, lam, power, x = random_instance(rng, K=3, N=8, seed=4)
    res = solve_alloc(sc, lam, power, x, options=AllocOptions(method=method, max_outer=50))
    if res.feasible:
        alloc = Allocation(lam, res.power, res.mec_cpu, res.assign)
        assert check_feasibility(sc, alloc).overall
