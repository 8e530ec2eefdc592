"""Simulation parameters and the flat ``key = value`` config format."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .alloc import AllocOptions
from .model import dbm_to_watts
from .power import PowerOptions


@dataclass(frozen=True)
class Params:
    """Network and solver parameters; defaults follow the reference simulation setup."""

    num_users: int = 5
    num_subcarriers: int = 64
    cpu_mec_hz: float = 10e9
    cpu_user_hz_min: float = 0.6e9
    cpu_user_hz_max: float = 0.7e9
    p_max_dbm: float = 30.0
    bits_min: float = 1000.0
    bits_max: float = 1500.0
    deadline_s: float = 0.045
    cycles_per_bit_min: float = 1000.0
    cycles_per_bit_max: float = 1100.0
    noise_w: float = 1e-13
    bandwidth_hz: float = 12.5e3
    kappa_user: float = 1e-24
    kappa_mec: float = 1e-26
    radius_m: float = 50.0
    min_distance_m: float = 1.0
    z_max: int = 600
    eps: float = 1e-5
    step_zeta: float = 1e-6
    step_eta: float = 1e-8
    step_xi: float = 1e-8
    step_theta: float = 1e-15
    step_iota: float = 1e-4
    step_nu: float = 1e-8
    dual_method: str = "exact"

    @property
    def p_max_w(self) -> float:
        return dbm_to_watts(self.p_max_dbm)

    def power_options(self) -> PowerOptions:
        return PowerOptions(eps1=self.eps, eps2=self.eps, dual_method=self.dual_method,
                            step_budget=self.step_iota, step_rate=self.step_nu)

    def alloc_options(self) -> AllocOptions:
        return AllocOptions(method=self.dual_method, eps3=self.eps, step_zeta=self.step_zeta,
                            step_eta=self.step_eta, step_xi=self.step_xi, step_theta=self.step_theta)

    def with_(self, **changes) -> "Params":
        return dataclasses.replace(self, **changes)


PARAM_FIELDS = {f.name: f.type for f in dataclasses.fields(Params)}

# keys accepted in a config file besides the Params fields
SWEEP_KEYS = ("sweep_var", "sweep_values", "seeds", "variants", "workers", "timing", "users", "subcarriers")


@dataclass(frozen=True)
class ExperimentConfig:
    sweep_var: str = "K"
    values: tuple = (5, 10)
    seeds: int = 3
    variants: tuple = ("pa", "epa", "fr", "lc")
    base: Params = field(default_factory=Params)
    workers: int = 1
    timing: bool = True

    def __post_init__(self):
        if not self.values:
            raise ValueError("sweep grid is empty")
        if self.seeds < 1:
            raise ValueError("need at least one seed per point")
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"sweep_var must be one of {sorted(SWEEP_VARS)}, got {self.sweep_var!r}")


def _set_fk(p: Params, v) -> Params:
    return p.with_(cpu_user_hz_min=float(v), cpu_user_hz_max=float(v))


SWEEP_VARS = {
    "K": lambda p, v: p.with_(num_users=int(v)),
    "N": lambda p, v: p.with_(num_subcarriers=int(v)),
    "p_max": lambda p, v: p.with_(p_max_dbm=float(v)),
    "T": lambda p, v: p.with_(deadline_s=float(v)),
    "f_k": _set_fk,
    "F": lambda p, v: p.with_(cpu_mec_hz=float(v)),
}


def apply_sweep(params: Params, var: str, value) -> Params:
    return SWEEP_VARS[var](params, value)


def _coerce(name: str, raw: str):
    kind = PARAM_FIELDS[name]
    if kind in ("int", int):
        return int(float(raw))
    if kind in ("str", str):
        return raw
    return float(raw)


def read_flat(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` lines (``#`` comments allowed) into a dict."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[main]\n" + Path(path).read_text())
    return dict(parser["main"])


def load_params(path: str | Path | None = None, base: Params | None = None) -> Params:
    params = base or Params()
    if path is None:
        return params
    raw = read_flat(path)
    changes = {k: _coerce(k, v) for k, v in raw.items() if k in PARAM_FIELDS}
    if "users" in raw:
        changes["num_users"] = int(raw["users"])
    if "subcarriers" in raw:
        changes["num_subcarriers"] = int(raw["subcarriers"])
    unknown = set(raw) - set(PARAM_FIELDS) - set(SWEEP_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return params.with_(**changes)


def _split(raw: str) -> list[str]:
    return [s.strip() for s in raw.replace(";", ",").split(",") if s.strip()]


def load_experiment(path: str | Path) -> ExperimentConfig:
    raw = read_flat(path)
    base = load_params(path)
    kwargs = {"base": base}
    if "sweep_var" in raw:
        kwargs["sweep_var"] = raw["sweep_var"]
    if "sweep_values" in raw:
        kwargs["values"] = tuple(float(v) for v in _split(raw["sweep_values"]))
    if "seeds" in raw:
        kwargs["seeds"] = int(raw["seeds"])
    if "variants" in raw:
        kwargs["variants"] = tuple(v.lower() for v in _split(raw["variants"]))
    if "workers" in raw:
        kwargs["workers"] = int(raw["workers"])
    if "timing" in raw:
        kwargs["timing"] = raw["timing"].strip().lower() in ("1", "true", "yes", "on")
    return ExperimentConfig(**kwargs)
