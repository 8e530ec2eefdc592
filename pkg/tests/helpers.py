"""Instance builders shared by the test modules."""
import numpy as np

from mecopt.config import Params
from mecopt.model import Scenario, make_tasks
from mecopt.scenario import gen_scenario


def small_scenario(K=3, N=8, seed=0, **overrides) -> Scenario:
    return gen_scenario(Params(num_users=K, num_subcarriers=N, **overrides), seed)


def flat_scenario(gains, bits=1200.0, cycles=1000.0, local_cpu=0.65e9, deadline=0.045, p_max=1.0,
                  kappa_user=1e-24, mec=10e9, kappa_mec=1e-26, bandwidth=12.5e3) -> Scenario:
    gains = np.atleast_2d(np.asarray(gains, dtype=float))
    K = gains.shape[0]
    tasks = make_tasks(np.full(K, bits), np.full(K, cycles), np.full(K, local_cpu), deadline, p_max, kappa_user)
    return Scenario(tasks, gains, bandwidth, mec, kappa_mec)


# criterion number -> one-line verdict, filled by test_acceptance and printed by the conftest
ACCEPTANCE: dict[int, str] = {}
