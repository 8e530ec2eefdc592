import numpy as np
import pytest
from scipy.optimize import minimize, minimize_scalar

from helpers import small_scenario
from mecopt.driver import initial_allocation
from mecopt.joint import (equal_power_for_rate, improve_assignment, max_spectral_eff, refine_power_cpu,
                          user_energy, waterfill_for_rate)
from mecopt.model import check_feasibility, system_energy


def test_waterfill_hits_rate_with_least_power(rng):
    for _ in range(50):
        g = 10 ** rng.uniform(0, 3, 5)
        c = rng.uniform(0.5, 12)
        p = waterfill_for_rate(g, c)
        assert np.sum(np.log2(1 + p * g)) == pytest.approx(c, rel=1e-12)
        cons = {"type": "eq", "fun": lambda q: np.sum(np.log2(1 + q * g)) - c}
        ref = minimize(np.sum, np.full(5, p.sum() / 5 + 0.1), method="SLSQP", bounds=[(0, None)] * 5,
                       constraints=[cons], options={"ftol": 1e-14, "maxiter": 500})
        assert p.sum() <= ref.fun * (1 + 1e-6)


def test_max_rate_inverts_waterfill(rng):
    g = 10 ** rng.uniform(0, 3, 6)
    c = max_spectral_eff(g, 2.5)
    assert waterfill_for_rate(g, c).sum() == pytest.approx(2.5, rel=1e-10)


def test_equal_power_for_rate():
    g = np.array([10.0, 100.0, 1000.0])
    p = equal_power_for_rate(g, 9.0)
    assert np.sum(np.log2(1 + p * g)) == pytest.approx(9.0, rel=1e-13)


def test_refine_beats_any_single_share():
    sc = small_scenario(K=3, N=12, seed=1)
    a = initial_allocation(sc)
    a.lam[:] = 1.0
    out = refine_power_cpu(sc, a)
    assert out is not None and check_feasibility(sc, out).overall
    # each user's share is a minimiser of its own energy curve (capacity is far from binding here)
    for k in range(3):
        idx = np.flatnonzero(a.assign[k])
        fn = lambda f: user_energy(sc, k, 1.0, idx, f)
        lo = out.mec_cpu[k] * 0.2
        ref = minimize_scalar(fn, bounds=(lo, out.mec_cpu[k] * 5), method="bounded", options={"xatol": 1e-3})
        assert fn(out.mec_cpu[k]) <= ref.fun * (1 + 1e-9)


def test_refine_respects_tight_capacity():
    sc = small_scenario(K=3, N=12, seed=1, cpu_mec_hz=8.2e7)   # between the minimum (8.10e7) and free (8.28e7) totals
    a = initial_allocation(sc)
    a.lam[:] = 1.0
    out = refine_power_cpu(sc, a)
    assert out is not None
    assert out.mec_cpu.sum() == pytest.approx(sc.mec_capacity, rel=1e-6)   # capacity binds
    assert check_feasibility(sc, out).overall


def test_improve_assignment_never_hurts():
    for seed in range(3):
        sc = small_scenario(K=3, N=12, seed=seed)
        a = initial_allocation(sc)
        a.lam[:] = 1.0
        r = refine_power_cpu(sc, a)
        moved = improve_assignment(sc, r)
        e_before = sum(user_energy(sc, k, 1.0, np.flatnonzero(r.assign[k]), r.mec_cpu[k]) for k in range(3))
        e_after = sum(user_energy(sc, k, 1.0, np.flatnonzero(moved.assign[k]), moved.mec_cpu[k]) for k in range(3))
        assert e_after <= e_before * (1 + 1e-12)
        assert np.all(moved.assign.sum(axis=0) <= 1)
        again = refine_power_cpu(sc, moved)
        assert system_energy(sc, again) <= system_energy(sc, r) * (1 + 1e-9)


def test_refine_reports_impossible_capacity():
    sc = small_scenario(K=3, N=12, seed=1, cpu_mec_hz=6e7)
    a = initial_allocation(sc)
    a.lam[:] = 1.0
    assert refine_power_cpu(sc, a) is None
