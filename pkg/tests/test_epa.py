import numpy as np
import pytest

from helpers import flat_scenario, small_scenario
from mecopt.driver import initial_allocation
from mecopt.epa import (epa_stationarity, epa_window, nbar, pbar_equal_gain, pbar_high_snr, solve_epa,
                        solve_pbar)
from mecopt.errors import InfeasibleWindow, NoSubcarriers
from mecopt.model import Allocation, check_feasibility, rates
from mecopt.power import solve_power

B = 12.5e3


def interior_draw(rng, count, gain):
    """(a, b, lam_bits) whose stationary point lies well inside a wide box."""
    lam_bits = rng.uniform(500, 1500)
    b = 10 ** rng.uniform(-6, -3)
    a = 10 ** rng.uniform(-8, -4)
    return a, b, lam_bits


def test_equal_gain_closed_form_matches_root(rng):
    checked = 0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        g = 10 ** rng.uniform(4, 10)
        a, b, lb = interior_draw(rng, n, g)
        closed = pbar_equal_gain(a, b, 0.0, 0.0, lb, g, n, B)
        if not 0 < closed < 1e3:
            continue
        root = solve_pbar(a, b, 0.0, 0.0, lb, np.full(n, g), B, 0.0, 1e3)
        assert root == pytest.approx(closed, rel=1e-8)
        checked += 1
    assert checked > 100


def test_high_snr_form_within_one_percent(rng):
    checked = 0
    for _ in range(300):
        n = int(rng.integers(1, 6))
        g = 10 ** rng.uniform(6, 12, n)
        a, b, lb = interior_draw(rng, n, g.min())
        root = solve_pbar(a, b, 0.0, 0.0, lb, g, B, 0.0, 1e3)
        if not (0 < root < 1e3) or root * g.min() <= 100:
            continue
        assert pbar_high_snr(a, b, 0.0, 0.0, lb, n, B) == pytest.approx(root, rel=1e-2)
        checked += 1
    assert checked > 50


def test_stationarity_zero_at_root(rng):
    g = 10 ** rng.uniform(5, 9, 4)
    p = solve_pbar(1e-5, 1e-4, 0.0, 0.0, 1200.0, g, B, 0.0, 1e3)
    scale = 1e-4 * 4 * 1200.0
    assert abs(epa_stationarity(p, 1e-5, 1e-4, 0.0, 0.0, 1200.0, g, B)) <= 1e-9 * scale


def test_batch_matches_scalar(rng):
    g = 10 ** rng.uniform(5, 9, (3, 4))
    g[1, 2:] = np.nan
    batch = solve_pbar(1e-5, 1e-4, 0.0, 0.0, 1200.0, g, B, np.zeros(3), np.full(3, 1e3))
    for k in range(3):
        row = g[k][np.isfinite(g[k])]
        assert batch[k] == pytest.approx(solve_pbar(1e-5, 1e-4, 0.0, 0.0, 1200.0, row, B, 0.0, 1e3), rel=1e-12)


def test_box_boundaries():
    g = np.full(2, 1e8)
    assert solve_pbar(1e-5, 1e-4, 0.0, 0.0, 1200.0, g, B, 5.0, 10.0) == 5.0     # root below the box
    assert solve_pbar(1e-5, 1e-4, 0.0, 0.0, 1200.0, g, B, 0.0, 1e-12) == 1e-12  # root above the box


def test_window_lower_bound_meets_rate():
    sc = small_scenario(K=3, N=12, seed=2)
    a = initial_allocation(sc)
    lam, f = np.ones(3), a.mec_cpu * 3
    lo, hi = epa_window(sc, lam, f, a.assign)
    p = np.where(a.assign, lo[:, None], 0.0)
    t_up = sc.deadline - sc.bits * sc.cycles / f
    assert np.all(rates(sc, p, a.assign) >= sc.bits / t_up * (1 - 1e-12))
    assert np.allclose(lo, 2.0 ** nbar(sc, lam, f, a.assign))


def test_nbar_needs_subcarriers():
    sc = small_scenario(K=2, N=4)
    with pytest.raises(NoSubcarriers):
        nbar(sc, np.ones(2), np.full(2, 1e9), np.zeros((2, 4), bool))


def test_single_subcarrier_matches_full_solver():
    # one subcarrier and a demanding rate (about 16 bit/s/Hz), where the high-SNR bound is tight
    sc = flat_scenario([[1e10]])
    f = np.array([1200.0 * 1000.0 / (0.045 - 1200.0 / (16 * B))])
    x = np.ones((1, 1), bool)
    epa = solve_epa(sc, [1.0], f, x)
    full = solve_power(sc, [1.0], f, x)
    assert epa.energy() == pytest.approx(full.energy(), rel=1e-4)


def test_solve_epa_feasible_equal_powers():
    for seed in range(4):
        sc = small_scenario(K=3, N=12, seed=seed)
        a = initial_allocation(sc)
        lam, f = np.ones(3), a.mec_cpu * 3
        res = solve_epa(sc, lam, f, a.assign)
        assert check_feasibility(sc, Allocation(lam, res.power, f, a.assign)).overall
        for k in range(3):
            if k not in res.fallback_users:
                own = res.power[k, a.assign[k]]
                assert np.allclose(own, own[0])


def test_empty_window_fallback_or_raise():
    # tiny budget: the equal-power box is empty but the per-subcarrier solver still copes
    sc = flat_scenario([[1e6, 1e12]], p_max=1e-6)
    f = np.array([1200.0 * 1000.0 / 0.04])
    x = np.ones((1, 2), bool)
    lo, hi = epa_window(sc, [1.0], f, x)
    assert lo[0] > hi[0]
    with pytest.raises(InfeasibleWindow):
        solve_epa(sc, [1.0], f, x, fallback=False)
    res = solve_epa(sc, [1.0], f, x)
    assert res.fallback_users == [0] and "window_fallback" in res.flags
