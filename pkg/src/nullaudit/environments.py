"""Induced-null market environments and the blind-parameter machinery.

Six seedable daily-return generators: white noise, Markov regime-switching
volatility, an MA(1) microstructure placebo, a one-factor zero-alpha model,
GARCH(1,1), and a threshold-autoregressive positive control. The first
five carry no conditional-mean predictability by construction (the placebo
adds an MA(1) term to observed returns while the latent efficient return
stays a martingale difference); the TAR family injects a known, tunable
amount of real predictability for power studies.

Generation is a pure function of (family, params, length, seed), so paths
are bit-identical across runs and across process layouts.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Mapping

import numpy as np

from .rng import child_sequence, stream

__all__ = [
    "TRADING_DAYS",
    "Family",
    "Role",
    "WhiteNoiseParams",
    "RegimeSwitchParams",
    "MA1PlaceboParams",
    "FactorNullParams",
    "Garch11Params",
    "TarParams",
    "EnvironmentSpec",
    "ReturnPath",
    "ParameterDistribution",
    "generate",
    "default_params",
    "default_spec",
    "canonical_null_specs",
    "draw_parameter_sets",
    "write_path_csv",
    "write_path_npy",
    "spec_to_json",
    "spec_from_json",
]

TRADING_DAYS = 252

_GARCH_BURN_IN = 500


class Family(str, Enum):
    WHITE_NOISE = "WhiteNoise"
    REGIME_SWITCH = "RegimeSwitch"
    MA1_PLACEBO = "MA1Placebo"
    FACTOR_NULL = "FactorNull"
    GARCH11 = "Garch11"
    TAR_POSITIVE = "TarPositive"


class Role(str, Enum):
    DEV = "Dev"
    AUDIT = "Audit"


def _daily(sigma_ann: float) -> float:
    return sigma_ann / math.sqrt(TRADING_DAYS)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class WhiteNoiseParams:
    sigma_ann: float = 0.20

    def __post_init__(self) -> None:
        _require(self.sigma_ann > 0, f"sigma_ann must be > 0, got {self.sigma_ann}")


@dataclass(frozen=True)
class RegimeSwitchParams:
    sigma_ann_low: float = 0.10
    vol_multiplier: float = 3.0
    p11: float = 0.98
    p22: float = 0.98

    def __post_init__(self) -> None:
        _require(self.sigma_ann_low > 0, "sigma_ann_low must be > 0")
        _require(self.vol_multiplier > 1.0, "vol_multiplier must exceed 1")
        for name in ("p11", "p22"):
            p = getattr(self, name)
            _require(0.0 < p < 1.0, f"{name} must lie in (0,1), got {p}")


@dataclass(frozen=True)
class MA1PlaceboParams:
    sigma_ann: float = 0.20
    theta: float = -0.5

    def __post_init__(self) -> None:
        _require(self.sigma_ann > 0, "sigma_ann must be > 0")
        _require(abs(self.theta) < 1.0, f"|theta| must be < 1, got {self.theta}")


@dataclass(frozen=True)
class FactorNullParams:
    beta: float = 1.0
    sigma_f_ann: float = 0.20
    sigma_e_ann: float = 0.10

    def __post_init__(self) -> None:
        _require(self.sigma_f_ann > 0, "sigma_f_ann must be > 0")
        _require(self.sigma_e_ann > 0, "sigma_e_ann must be > 0")


@dataclass(frozen=True)
class Garch11Params:
    alpha: float = 0.10
    beta: float = 0.85
    sigma_ann: float = 0.20

    def __post_init__(self) -> None:
        _require(self.alpha >= 0.0, "alpha must be >= 0")
        _require(self.beta >= 0.0, "beta must be >= 0")
        _require(self.alpha + self.beta < 1.0, "alpha + beta must be < 1 for stationarity")
        _require(self.sigma_ann > 0, "sigma_ann must be > 0")


@dataclass(frozen=True)
class TarParams:
    phi: float = 0.15
    theta_act: float = 2.0
    sigma_ann: float = 0.15

    def __post_init__(self) -> None:
        _require(abs(self.phi) < 1.0, f"|phi| must be < 1, got {self.phi}")
        _require(self.theta_act >= 0.0, "theta_act must be >= 0")
        _require(self.sigma_ann > 0, "sigma_ann must be > 0")


_PARAM_TYPES = {
    Family.WHITE_NOISE: WhiteNoiseParams,
    Family.REGIME_SWITCH: RegimeSwitchParams,
    Family.MA1_PLACEBO: MA1PlaceboParams,
    Family.FACTOR_NULL: FactorNullParams,
    Family.GARCH11: Garch11Params,
    Family.TAR_POSITIVE: TarParams,
}

Params = (
    WhiteNoiseParams
    | RegimeSwitchParams
    | MA1PlaceboParams
    | FactorNullParams
    | Garch11Params
    | TarParams
)


@dataclass(frozen=True)
class EnvironmentSpec:
    family: Family
    params: Params
    length_T: int = 2520
    seed: int = 0
    label: str | None = None
    role: Role | None = None

    def __post_init__(self) -> None:
        expected = _PARAM_TYPES[self.family]
        if not isinstance(self.params, expected):
            raise ValueError(
                f"family {self.family.value} expects {expected.__name__}, "
                f"got {type(self.params).__name__}"
            )
        _require(self.length_T >= 2, f"length_T must be >= 2, got {self.length_T}")

    @property
    def name(self) -> str:
        return self.label if self.label is not None else self.family.value

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "params": dataclasses.asdict(self.params),
            "length_T": self.length_T,
            "seed": int(self.seed),
            "label": self.label,
            "role": self.role.value if self.role is not None else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnvironmentSpec":
        family = Family(d["family"])
        params = _PARAM_TYPES[family](**d["params"])
        role = Role(d["role"]) if d.get("role") else None
        return cls(
            family=family,
            params=params,
            length_T=int(d["length_T"]),
            seed=int(d["seed"]),
            label=d.get("label"),
            role=role,
        )


@dataclass(frozen=True)
class ReturnPath:
    """A daily return series plus provenance metadata."""

    values: np.ndarray
    label: str = "path"
    seed: int | None = None
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        _require(values.ndim == 1, "returns must be one-dimensional")
        _require(np.all(np.isfinite(values)), "returns must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.shape[0])


def default_params(family: Family) -> Params:
    return _PARAM_TYPES[family]()


def default_spec(family: Family, length_T: int = 2520, seed: int = 0) -> EnvironmentSpec:
    return EnvironmentSpec(family=family, params=default_params(family), length_T=length_T, seed=seed)


def canonical_null_specs(length_T: int = 2520, seed: int = 0) -> list[EnvironmentSpec]:
    """The five null reference environments at their default calibrations."""
    return [
        default_spec(f, length_T=length_T, seed=seed)
        for f in (
            Family.WHITE_NOISE,
            Family.REGIME_SWITCH,
            Family.MA1_PLACEBO,
            Family.FACTOR_NULL,
            Family.GARCH11,
        )
    ]


def _gen_white_noise(p: WhiteNoiseParams, t_len: int, rng: np.random.Generator) -> np.ndarray:
    return _daily(p.sigma_ann) * rng.standard_normal(t_len)


def _markov_states(p: RegimeSwitchParams, t_len: int, rng: np.random.Generator) -> np.ndarray:
    # Initial state from the stationary distribution, then exact sojourn
    # lengths: time spent in a state before switching is Geometric(1 - p_stay).
    pi1 = (1.0 - p.p22) / ((1.0 - p.p11) + (1.0 - p.p22))
    state = 0 if rng.random() < pi1 else 1
    p_stay = (p.p11, p.p22)
    states = np.empty(t_len, dtype=np.int8)
    pos = 0
    while pos < t_len:
        run = int(rng.geometric(1.0 - p_stay[state]))
        end = min(pos + run, t_len)
        states[pos:end] = state
        pos = end
        state = 1 - state
    return states


def _gen_regime_switch(p: RegimeSwitchParams, t_len: int, rng: np.random.Generator) -> np.ndarray:
    states = _markov_states(p, t_len, rng)
    sigma1 = _daily(p.sigma_ann_low)
    sigma = np.where(states == 0, sigma1, p.vol_multiplier * sigma1)
    return sigma * rng.standard_normal(t_len)


def _gen_ma1(p: MA1PlaceboParams, t_len: int, rng: np.random.Generator) -> np.ndarray:
    # sigma_eps chosen so Var(r_t) = sigma_daily^2 exactly; u_0 drawn fresh.
    sigma_eps = _daily(p.sigma_ann) / math.sqrt(1.0 + p.theta * p.theta)
    u = sigma_eps * rng.standard_normal(t_len + 1)
    return u[1:] + p.theta * u[:-1]


def _gen_factor_null(p: FactorNullParams, t_len: int, rng: np.random.Generator) -> np.ndarray:
    f = _daily(p.sigma_f_ann) * rng.standard_normal(t_len)
    e = _daily(p.sigma_e_ann) * rng.standard_normal(t_len)
    return p.beta * f + e


def _gen_garch11(p: Garch11Params, t_len: int, rng: np.random.Generator) -> np.ndarray:
    var_d = _daily(p.sigma_ann) ** 2
    omega = (1.0 - p.alpha - p.beta) * var_d
    n = t_len + _GARCH_BURN_IN
    eps = rng.standard_normal(n)
    r = np.empty(n)
    h = var_d
    r_prev_sq = 0.0
    for t in range(n):
        if t > 0:
            h = omega + p.alpha * r_prev_sq + p.beta * h
        r_t = math.sqrt(h) * eps[t]
        r[t] = r_t
        r_prev_sq = r_t * r_t
    return r[_GARCH_BURN_IN:]


def _gen_tar(p: TarParams, t_len: int, rng: np.random.Generator) -> np.ndarray:
    sigma = _daily(p.sigma_ann)
    activation = p.theta_act * sigma
    eps = sigma * rng.standard_normal(t_len)
    r = np.empty(t_len)
    r[0] = eps[0]
    phi = p.phi
    for t in range(1, t_len):
        prev = r[t - 1]
        r[t] = (phi * prev if abs(prev) > activation else 0.0) + eps[t]
    return r


_GENERATORS = {
    Family.WHITE_NOISE: _gen_white_noise,
    Family.REGIME_SWITCH: _gen_regime_switch,
    Family.MA1_PLACEBO: _gen_ma1,
    Family.FACTOR_NULL: _gen_factor_null,
    Family.GARCH11: _gen_garch11,
    Family.TAR_POSITIVE: _gen_tar,
}


def generate(spec: EnvironmentSpec) -> ReturnPath:
    """Simulate one return path. Pure in (family, params, length_T, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence(int(spec.seed)))
    values = _GENERATORS[spec.family](spec.params, spec.length_T, rng)
    return ReturnPath(values=values, label=spec.name, seed=int(spec.seed), meta={"spec": spec.to_dict()})


@dataclass(frozen=True)
class ParameterDistribution:
    """Uniform parameter ranges for blind draws of one family.

    Dev and Audit draws derive from distinct, recorded seed lineages: the
    role tag enters the stream-derivation path, so the two sets can never
    share a stream even under an identical base seed.
    """

    family: Family
    ranges: Mapping[str, tuple[float, float]]
    draw_count: int
    seed: int
    role: Role
    length_T: int = 2520

    def __post_init__(self) -> None:
        _require(self.draw_count >= 1, "draw_count must be >= 1")
        _require(self.length_T >= 2, "length_T must be >= 2")
        valid = {f.name for f in dataclasses.fields(_PARAM_TYPES[self.family])}
        for key, (lo, hi) in self.ranges.items():
            _require(key in valid, f"unknown parameter {key!r} for {self.family.value}")
            _require(lo <= hi, f"range for {key!r} has lo > hi")


def _corner_params(dist: ParameterDistribution, corner: int) -> Params:
    values = {k: (lo if corner == 0 else hi) for k, (lo, hi) in dist.ranges.items()}
    return dataclasses.replace(default_params(dist.family), **values)


def draw_parameter_sets(dist: ParameterDistribution) -> list[EnvironmentSpec]:
    """Draw ``draw_count`` environment specs from uniform parameter ranges.

    Both corners of the box are validated against the family's parameter
    domain before any draw, so an out-of-domain range fails fast.
    """
    for corner in (0, 1):
        try:
            _corner_params(dist, corner)
        except ValueError as exc:
            raise ValueError(f"parameter range outside domain: {exc}") from exc
    specs = []
    for i in range(dist.draw_count):
        rng = stream(dist.seed, "blind-draw", dist.role.value, i)
        values = {}
        for key in sorted(dist.ranges):
            lo, hi = dist.ranges[key]
            values[key] = float(lo + (hi - lo) * rng.random())
        params = dataclasses.replace(default_params(dist.family), **values)
        path_seed = int(
            child_sequence(dist.seed, "blind-path", dist.role.value, i).generate_state(1, np.uint64)[0]
        )
        specs.append(
            EnvironmentSpec(
                family=dist.family,
                params=params,
                length_T=dist.length_T,
                seed=path_seed,
                label=f"{dist.family.value}-{dist.role.value}-{i}",
                role=dist.role,
            )
        )
    return specs


def write_path_csv(path: ReturnPath, fh: IO[str]) -> None:
    fh.write("t,r_t\n")
    for t, r in enumerate(path.values):
        fh.write(f"{t},{float(r)!r}\n")


def write_path_npy(path: ReturnPath, file: str) -> None:
    np.save(file, path.values)


def spec_to_json(spec: EnvironmentSpec, fh: IO[str]) -> None:
    json.dump(spec.to_dict(), fh, indent=2)


def spec_from_json(fh: IO[str]) -> EnvironmentSpec:
    return EnvironmentSpec.from_dict(json.load(fh))
