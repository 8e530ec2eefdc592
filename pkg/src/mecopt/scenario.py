"""Random network instances: users in a disc around the MEC server, Rayleigh block fading."""
from __future__ import annotations

import numpy as np

from .config import Params
from .model import Scenario, make_tasks


def rayleigh_power_gain(rng: np.random.Generator, size) -> np.ndarray:
    """|beta|**2 for a unit-power Rayleigh amplitude, i.e. Exp(1)."""
    return rng.exponential(1.0, size)


def user_distances(rng: np.random.Generator, num_users: int, radius: float, min_distance: float) -> np.ndarray:
    """Distances of users dropped uniformly (by area) in a disc."""
    return np.maximum(radius * np.sqrt(rng.random(num_users)), min_distance)


def gen_scenario(params: Params, seed: int) -> Scenario:
    """Draw one instance.

    Positions, fading and task data come from independent child streams of
    ``seed`` and task quantities are drawn as unit uniforms before scaling, so
    changing a range (e.g. the local CPU speed) or N leaves the other draws
    untouched.
    """
    K, N = params.num_users, params.num_subcarriers
    pos_ss, fade_ss, task_ss = np.random.SeedSequence(seed).spawn(3)
    d = user_distances(np.random.default_rng(pos_ss), K, params.radius_m, params.min_distance_m)
    fading = rayleigh_power_gain(np.random.default_rng(fade_ss), (K, N))
    gains = fading * d[:, None] ** -2.0 / params.noise_w
    u = np.random.default_rng(task_ss).random((3, K))
    bits = params.bits_min + u[0] * (params.bits_max - params.bits_min)
    cycles = params.cycles_per_bit_min + u[1] * (params.cycles_per_bit_max - params.cycles_per_bit_min)
    local_cpu = params.cpu_user_hz_min + u[2] * (params.cpu_user_hz_max - params.cpu_user_hz_min)
    tasks = make_tasks(bits, cycles, local_cpu, params.deadline_s, params.p_max_w, params.kappa_user)
    return Scenario(tasks, gains, params.bandwidth_hz, params.cpu_mec_hz, params.kappa_mec, params.noise_w)
