import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from helpers import small_scenario
from mecopt.driver import initial_allocation
from mecopt.errors import DeadlineExhausted, NoSubcarriers, StalledLineSearch
from mecopt.model import Allocation, check_feasibility, rates
from mecopt.power import (PowerDuals, PowerOptions, ScaState, SumRatioAux, UplinkProblem, aux_from_power,
                          damped_newton_step, high_gain_power, inner_power, lagrangian_derivative,
                          rate_denominator_h, residual_W, sca_constants, solve_power, taylor_rate,
                          update_power_duals, uplink_energy)

LN2 = math.log(2.0)


def setup(K=3, N=8, seed=0, share=3.0):
    sc = small_scenario(K=K, N=N, seed=seed)
    a = initial_allocation(sc)
    return sc, np.ones(K), a.mec_cpu * share, a.assign


def min_power_oracle(gains, spectral_eff, p_max):
    """Smallest sum power meeting sum log2(1 + p g) >= c, by a generic NLP solver."""
    n = len(gains)
    unit = 1.0 / gains.max()          # optimise in SNR units so the solver sees O(1) numbers
    g = gains * unit
    s0 = np.full(n, (2 ** (spectral_eff / n) - 1) / g.min())
    cons = [{"type": "ineq", "fun": lambda s: np.sum(np.log2(1 + s * g)) / spectral_eff - 1.0}]
    res = minimize(lambda s: s.sum() / s0.sum(), s0, method="SLSQP", bounds=[(0, p_max / unit)] * n,
                   constraints=cons, options={"ftol": 1e-14, "maxiter": 500})
    assert res.success
    return res.x * unit


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-8, 1e-2), st.floats(1e-6, 1e-2), st.floats(0, 1e-2), st.floats(0, 1e-6),
       st.floats(1e3, 1e9), st.floats(1e-6, 1e-1))
def test_inner_power_is_stationary(a, b, phi, theta, g, point):
    lam_bits, B = 1200.0, 12.5e3
    p = inner_power(a, b, phi, theta, lam_bits, g, point, B)
    if not (0 < p < np.inf):
        return
    terms = [b * lam_bits, a * b * B * g / ((1 + p * g) * LN2), phi, theta * g / ((1 + point * g) * LN2)]
    assert abs(lagrangian_derivative(p, a, b, phi, theta, lam_bits, g, point, B)) <= 1e-8 * max(terms)


def test_inner_power_clips_and_pins():
    assert inner_power(1e-9, 1e-6, 1.0, 0.0, 1200.0, 1e3, 1e-3, 12.5e3) == 0.0
    assert inner_power(1.0, 1e-3, 0.0, 0.0, 1200.0, 1e6, 1e-3, 12.5e3, cap=0.5) == 0.5
    # multiplier large enough to flip the denominator: power goes to the cap
    assert inner_power(1.0, 1e-6, 0.0, 1.0, 1200.0, 1e6, 1e-3, 12.5e3, cap=0.2) == 0.2


def test_high_gain_limit():
    args = (1e-4, 1e-3, 1e-3, 1e-9, 1200.0)
    far = inner_power(*args, 1e15, 1e-2, 12.5e3)
    assert far == pytest.approx(high_gain_power(*args, 1e-2, 12.5e3), rel=1e-6)


def test_taylor_is_tangent_and_upper_bound(rng):
    p, q, g = rng.uniform(0, 1, 1000), rng.uniform(1e-4, 1, 1000), 10 ** rng.uniform(0, 8, 1000)
    exact = np.log2(1 + p * g)
    lin = taylor_rate(p, q, g)
    assert np.allclose(taylor_rate(q, q, g), np.log2(1 + q * g), rtol=1e-14, atol=0)
    # log is concave, so its tangent lies above it
    assert np.all(lin >= exact - 1e-12 * np.abs(exact))


def test_sca_constants_hit_requirement_at_point():
    sc, lam, f, x = setup()
    prob = UplinkProblem.build(sc, lam, f, x)
    point = np.where(x, 1e-3, 0.0)
    sca = sca_constants(prob, point)
    lin = np.sum(sca.coef * point, axis=1)
    h = rate_denominator_h(point, prob.gains, prob.mask, 1.0)
    # linearised constraint at the expansion point equals the exact one
    assert np.allclose(lin - sca.offset, h - prob.required, rtol=1e-12, atol=1e-9)


def test_build_rejects_bad_inputs():
    sc, lam, f, x = setup()
    with pytest.raises(NoSubcarriers):
        UplinkProblem.build(sc, lam, f, np.zeros_like(x))
    with pytest.raises(DeadlineExhausted):
        UplinkProblem.build(sc, lam, np.full_like(f, 1e3), x)


def test_dual_update_projects_and_ascends():
    mask = np.ones((2, 2), bool)
    sca = ScaState(np.ones((2, 2)), np.array([5.0, 0.0]), np.ones((2, 2)))
    d = update_power_duals(PowerDuals(np.array([0.0, 1.0]), np.zeros(2)), np.array([[1, 1], [0, 0.]]), sca,
                           np.array([1.0, 5.0]), mask, 0.5, 0.1)
    assert d.budget[0] == pytest.approx(0.5)       # over budget: multiplier grows
    assert d.budget[1] == 0.0                      # under budget: projected at zero
    assert d.rate[0] == pytest.approx(0.3)         # linearised rate short by 3
    assert d.rate[1] == 0.0


def test_newton_step_reduces_residual():
    sc, lam, f, x = setup()
    prob = UplinkProblem.build(sc, lam, f, x)
    p = np.where(x, 1e-3, 0.0)
    aux = SumRatioAux(np.full(3, 1e-9), np.full(3, 1e-7))
    step = damped_newton_step(aux, p, prob)
    assert step.tau == 1.0 and step.w_norm < 1e-9 * residual_W(aux, p, prob)
    exact = aux_from_power(p, prob)
    assert residual_W(exact, p, prob) <= 1e-12


def test_newton_step_stalls_cleanly():
    sc, lam, f, x = setup()
    prob = UplinkProblem.build(sc, lam, f, x)
    p = np.where(x, 1e-3, 0.0)
    aux = SumRatioAux(np.full(3, 1e-9), np.full(3, 1e-7))
    worse = lambda trial: (p * 10.0, None)       # every trial point moves away from the fixed point
    with pytest.raises(StalledLineSearch):
        damped_newton_step(aux, p, prob, resolve=worse, max_halvings=3)


@pytest.mark.parametrize("seed", range(4))
def test_solve_power_matches_min_power_oracle(seed):
    sc, lam, f, x = setup(K=2, N=4, seed=seed)
    res = solve_power(sc, lam, f, x)
    prob = res.problem
    got = uplink_energy(res.power, prob)
    for k in range(2):
        g = sc.gains[k, x[k]]
        p = min_power_oracle(g, prob.required[k], sc.p_max[k])
        r = 12.5e3 * np.sum(np.log2(1 + p * g))
        oracle = p.sum() * prob.lam_bits[k] / r
        assert got[k] <= oracle * (1 + 1e-3)


def test_solve_power_result_is_feasible_and_fixed_point():
    for seed in range(5):
        sc, lam, f, x = setup(K=4, N=16, seed=seed)
        res = solve_power(sc, lam, f, x)
        alloc = Allocation(lam, res.power, f, x)
        assert check_feasibility(sc, alloc).overall
        if res.converged:
            h = rate_denominator_h(res.last_power, res.problem.gains, res.problem.mask, res.problem.bandwidth)
            assert res.w_norm <= 1e-5
            assert np.all(np.abs(res.aux.b * h - 1) <= 1e-4)


def test_solve_power_ignores_local_users():
    sc, lam, f, x = setup()
    lam[1] = 0.0
    p0 = np.where(x, 7e-4, 0.0)
    res = solve_power(sc, lam, f, x, p_init=p0)
    assert np.array_equal(res.power[1], p0[1])


def test_subgradient_mode_stays_feasible():
    sc, lam, f, x = setup(K=2, N=4)
    res = solve_power(sc, lam, f, x, options=PowerOptions(dual_method="subgradient", max_sca=5, max_aux=5))
    assert check_feasibility(sc, Allocation(lam, res.power, f, x)).overall
    r = rates(sc, res.power, x)
    assert np.all(r >= res.problem.required * sc.bandwidth * (1 - 1e-9))
