"""Model parameters and the structured-text configuration file.

All defaults reproduce the single-rotation salmon farm used throughout the
package: the commodity parameters for salmon and soy, the Bertalanffy growth
curve, the host-parasite rates and the farm cost structure.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised when a configuration value violates its invariants."""

    def __init__(self, section: str, field_name: str, message: str):
        self.section = section
        self.field_name = field_name
        super().__init__(f"[{section}] {field_name}: {message}")


def _require(cond: bool, section: str, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(section, name, message)


@dataclass(frozen=True)
class CommodityParams:
    """Two-factor (spot, convenience yield) commodity model parameters.

    ``lambda_rp`` is the risk premium on the convenience yield drift. Rates
    are per year, volatilities per square-root year.
    """

    sigma1: float
    sigma2: float
    kappa: float
    alpha: float
    lambda_rp: float
    rho: float
    s0: float
    delta0: float

    def __post_init__(self):
        s = "commodity"
        _require(self.sigma1 >= 0, s, "sigma1", "must be >= 0")
        _require(self.sigma2 >= 0, s, "sigma2", "must be >= 0")
        _require(self.kappa > 0, s, "kappa", "must be > 0")
        _require(self.lambda_rp >= 0, s, "lambda", "must be >= 0")
        _require(abs(self.rho) <= 1, s, "rho", "must lie in [-1, 1]")
        _require(self.s0 > 0, s, "s0", "must be > 0")
        for name in ("sigma1", "sigma2", "kappa", "alpha", "lambda_rp", "rho", "s0", "delta0"):
            _require(math.isfinite(getattr(self, name)), s, name, "must be finite")

    @property
    def alpha_star(self) -> float:
        """Long-run convenience-yield level net of the risk premium."""
        return self.alpha - self.lambda_rp / self.kappa


# Quoted spot prices used to set up the two commodity models.
SALMON_QUOTED_SPOT = 95.0
SOY_QUOTED_SPOT = 1500.0


def salmon_params(s0: float = 78.375) -> CommodityParams:
    return CommodityParams(
        sigma1=0.23, sigma2=0.75, kappa=2.6, alpha=0.02, lambda_rp=0.2, rho=0.9, s0=s0, delta0=0.57
    )


def soy_params(s0: float = 1.0) -> CommodityParams:
    # soy enters only through relative prices, hence s0 = 1
    return CommodityParams(
        sigma1=1.0, sigma2=0.4, kappa=1.2, alpha=0.06, lambda_rp=0.14, rho=0.44, s0=s0, delta0=0.0
    )


@dataclass(frozen=True)
class GlobalConfig:
    r: float = 0.0303
    T: float = 3.0
    n_exercise: int = 72
    n_paths: int = 4096
    n_eval_paths: int = 20 * 4096
    n_mean_paths: int = 8192
    seed: int = 2024

    def __post_init__(self):
        s = "global"
        _require(self.r > 0, s, "r", "must be > 0")
        _require(self.T > 0, s, "T", "must be > 0")
        _require(self.n_exercise >= 1, s, "n_exercise", "must be >= 1")
        _require(self.n_paths >= 1, s, "n_paths", "must be >= 1")
        _require(self.n_eval_paths >= 1, s, "n_eval_paths", "must be >= 1")
        _require(self.n_mean_paths >= 1, s, "n_mean_paths", "must be >= 1")
        _require(self.seed >= 0, s, "seed", "must be a non-negative integer")


@dataclass(frozen=True)
class GrowthParams:
    """Bertalanffy weight curve ``w_inf * (a - b exp(-c t))**3`` in kg."""

    a: float = 1.113
    b: float = 1.097
    c: float = 1.43
    w_inf: float = 6.0

    def __post_init__(self):
        s = "growth"
        _require(self.w_inf > 0, s, "w_inf", "must be > 0")
        _require(self.c > 0, s, "c", "must be > 0")
        _require(self.b >= 0, s, "b", "must be >= 0")
        _require(self.a > self.b, s, "a", "must exceed b")


@dataclass(frozen=True)
class BioParams:
    """Host-parasite rates and treatment-effect distributions.

    ``alpha_inf`` is the extra host mortality per louse per fish, ``b_lice``
    the intrinsic lice mortality and ``lambda_rep`` the lice reproduction rate.
    Treatments multiply the host count by ``X ~ U(x_low, 1)`` and the parasite
    count by ``Y = 0.1 + 0.8 * Beta(beta1, beta2)``.
    """

    mu: float = 0.05
    alpha_inf: float = 0.1
    b_lice: float = 0.05
    lambda_rep: float = 7.0143
    H0: float = 10000.0
    lpf0: float = 0.001
    x_low: float = 0.995
    beta1: float = 0.0829
    beta2: float = 0.0281

    def __post_init__(self):
        s = "biology"
        for name in ("mu", "alpha_inf", "b_lice", "lambda_rep"):
            _require(getattr(self, name) >= 0, s, name, "must be >= 0")
        _require(self.H0 > 0, s, "H0", "must be > 0")
        _require(self.lpf0 > 0, s, "lpf0", "must be > 0")
        _require(0 < self.x_low <= 1, s, "x_low", "must lie in (0, 1]")
        _require(self.beta1 > 0, s, "beta1", "must be > 0")
        _require(self.beta2 > 0, s, "beta2", "must be > 0")

    @property
    def P0(self) -> float:
        return self.lpf0 * self.H0


@dataclass(frozen=True)
class ThresholdFn:
    """Lice-per-fish treatment threshold, constant or piecewise constant.

    With ``times = (t1, ..., tk)`` and ``values = (v0, ..., vk)`` the threshold
    is ``v0`` on ``[0, t1)``, ``v1`` on ``[t1, t2)`` and so on.
    """

    values: tuple[float, ...] = (0.5,)
    times: tuple[float, ...] = ()

    def __post_init__(self):
        s = "biology.threshold"
        _require(len(self.values) == len(self.times) + 1, s, "values", "need one more value than breakpoints")
        _require(all(v > 0 for v in self.values), s, "values", "thresholds must be > 0")
        _require(list(self.times) == sorted(self.times), s, "times", "breakpoints must be increasing")

    @classmethod
    def constant(cls, value: float = 0.5) -> "ThresholdFn":
        return cls(values=(float(value),))

    def __call__(self, t):
        values = np.asarray(self.values, dtype=float)
        if not self.times:
            return values[0] if np.ndim(t) == 0 else np.full(np.shape(t), values[0])
        idx = np.searchsorted(np.asarray(self.times), t, side="right")
        return values[idx]

    @property
    def minimum(self) -> float:
        return min(self.values)


@dataclass(frozen=True)
class CostParams:
    """Farm cost structure in NOK. Defaults follow the quoted salmon spot of 95."""

    PC: float = 47.5
    h0: float = 4.75
    F0: float = 11.875
    BC0: float = 14.25
    conv: float = 1.1
    c_tr: float = 0.015
    s_hat0: float = SALMON_QUOTED_SPOT

    def __post_init__(self):
        s = "costs"
        for f in dataclasses.fields(self):
            _require(getattr(self, f.name) >= 0, s, f.name, "must be >= 0")
        _require(self.c_tr <= 1, s, "c_tr", "must lie in [0, 1]")

    @classmethod
    def from_quoted_spot(cls, s_hat0: float = SALMON_QUOTED_SPOT, **overrides) -> "CostParams":
        pc = 0.5 * s_hat0
        base = dict(PC=pc, h0=0.1 * pc, F0=0.25 * pc, BC0=0.3 * pc, s_hat0=s_hat0)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class SolverConfig:
    degree: int = 2
    rcond: float = 1e-8
    ridge: float = 0.0
    include_payoff: bool = True

    def __post_init__(self):
        s = "solver"
        _require(self.degree in (0, 1, 2), s, "degree", "must be 0, 1 or 2")
        _require(self.rcond > 0, s, "rcond", "must be > 0")
        _require(self.ridge >= 0, s, "ridge", "must be >= 0")


@dataclass(frozen=True)
class IngestConfig:
    region: str = "Trøndelag"
    gap_weeks: int = 4
    min_segment_points: int = 2

    def __post_init__(self):
        _require(self.gap_weeks >= 1, "ingest", "gap_weeks", "must be >= 1")
        _require(self.min_segment_points >= 1, "ingest", "min_segment_points", "must be >= 1")


@dataclass(frozen=True)
class CalibrationConfig:
    zeta: float = 2.0
    t_match: tuple[float, ...] = (1.77,)
    n_paths: int = 1000
    lambda_max: float = 50.0
    beta_max: float = 10.0

    def __post_init__(self):
        s = "calibrate"
        _require(self.zeta > 0, s, "zeta", "must be > 0")
        _require(len(self.t_match) >= 1 and all(t > 0 for t in self.t_match), s, "t_match", "need positive times")
        _require(self.n_paths >= 1, s, "n_paths", "must be >= 1")


@dataclass(frozen=True)
class Config:
    """Everything a run needs; a snapshot of this reproduces the run."""

    globals: GlobalConfig = field(default_factory=GlobalConfig)
    salmon: CommodityParams = field(default_factory=salmon_params)
    soy: CommodityParams = field(default_factory=soy_params)
    growth: GrowthParams = field(default_factory=GrowthParams)
    bio: BioParams = field(default_factory=BioParams)
    threshold: ThresholdFn = field(default_factory=ThresholdFn)
    costs: CostParams = field(default_factory=CostParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "global": dataclasses.asdict(self.globals),
            "commodity": {"salmon": _commodity_to_dict(self.salmon), "soy": _commodity_to_dict(self.soy)},
            "growth": dataclasses.asdict(self.growth),
            "biology": {
                **dataclasses.asdict(self.bio),
                "threshold": {"values": list(self.threshold.values), "times": list(self.threshold.times)},
            },
            "costs": dataclasses.asdict(self.costs),
            "solver": dataclasses.asdict(self.solver),
            "ingest": dataclasses.asdict(self.ingest),
            "calibrate": {**dataclasses.asdict(self.calibration), "t_match": list(self.calibration.t_match)},
        }


def _commodity_to_dict(p: CommodityParams) -> dict[str, float]:
    d = dataclasses.asdict(p)
    d["lambda"] = d.pop("lambda_rp")
    return d


def _build(cls, section: str, data: Mapping[str, Any], base=None, rename: Mapping[str, str] | None = None):
    rename = rename or {}
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = dataclasses.asdict(base) if base is not None else {}
    for key, value in data.items():
        name = rename.get(key, key)
        if name not in known:
            raise ConfigError(section, key, f"unknown field (expected one of {sorted(known)})")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(section, "*", str(exc)) from None


def config_from_dict(data: Mapping[str, Any]) -> Config:
    """Build a :class:`Config` from nested mappings; missing keys keep defaults."""
    known_sections = {"global", "commodity", "growth", "biology", "costs", "solver", "ingest", "calibrate"}
    for key in data:
        if key not in known_sections:
            raise ConfigError(key, "*", f"unknown section (expected one of {sorted(known_sections)})")

    cfg = Config()
    glob = _build(GlobalConfig, "global", data.get("global", {}), cfg.globals)

    costs_data = dict(data.get("costs", {}))
    if "s_hat0" in costs_data and not ({"PC", "h0", "F0", "BC0"} & costs_data.keys()):
        s_hat0 = costs_data.pop("s_hat0")
        base_costs = CostParams.from_quoted_spot(s_hat0)
    else:
        base_costs = cfg.costs
    costs = _build(CostParams, "costs", costs_data, base_costs)

    commodity = data.get("commodity", {})
    for key in commodity:
        if key not in ("salmon", "soy"):
            raise ConfigError("commodity", key, "expected [commodity.salmon] or [commodity.soy]")
    rename = {"lambda": "lambda_rp"}
    salmon_data = dict(commodity.get("salmon", {}))
    if "s0" not in salmon_data:
        # the simulated salmon spot is derived from the quoted spot and cost structure
        from .economics import initial_spot_adjustment

        salmon_data["s0"] = initial_spot_adjustment(costs)
    salmon = _build(CommodityParams, "commodity.salmon", salmon_data, cfg.salmon, rename)
    soy = _build(CommodityParams, "commodity.soy", commodity.get("soy", {}), cfg.soy, rename)

    growth = _build(GrowthParams, "growth", data.get("growth", {}), cfg.growth)
    bio_data = dict(data.get("biology", {}))
    thr = bio_data.pop("threshold", None)
    bio = _build(BioParams, "biology", bio_data, cfg.bio)
    threshold = _threshold_from(thr) if thr is not None else cfg.threshold
    if bio.lpf0 >= threshold(0.0):
        raise ConfigError("biology", "lpf0", "initial lice per fish must lie below the threshold at t=0")

    solver = _build(SolverConfig, "solver", data.get("solver", {}), cfg.solver)
    ingest = _build(IngestConfig, "ingest", data.get("ingest", {}), cfg.ingest)
    cal_data = dict(data.get("calibrate", {}))
    if "t_match" in cal_data:
        tm = cal_data["t_match"]
        cal_data["t_match"] = tuple(float(x) for x in (tm if isinstance(tm, Sequence) else [tm]))
    calibration = _build(CalibrationConfig, "calibrate", cal_data, cfg.calibration)
    return Config(glob, salmon, soy, growth, bio, threshold, costs, solver, ingest, calibration)


def _threshold_from(thr: Any) -> ThresholdFn:
    if isinstance(thr, (int, float)):
        return ThresholdFn.constant(float(thr))
    if isinstance(thr, Mapping):
        values = tuple(float(v) for v in thr.get("values", ()))
        times = tuple(float(t) for t in thr.get("times", ()))
        return ThresholdFn(values=values, times=times)
    raise ConfigError("biology", "threshold", "expected a number or a {values, times} table")


def load_config(path: str | Path | None) -> Config:
    """Load a TOML configuration file. ``None`` gives the defaults."""
    if path is None:
        return Config()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data)


DEFAULT_TOML = """\
[global]
r = 0.0303
T = 3.0
n_exercise = 72
n_paths = 4096
n_eval_paths = 81920
n_mean_paths = 8192
seed = 2024

[commodity.salmon]
sigma1 = 0.23
sigma2 = 0.75
kappa = 2.6
alpha = 0.02
lambda = 0.2
rho = 0.9
delta0 = 0.57

[commodity.soy]
sigma1 = 1.0
sigma2 = 0.4
kappa = 1.2
alpha = 0.06
lambda = 0.14
rho = 0.44
delta0 = 0.0
s0 = 1.0

[growth]
a = 1.113
b = 1.097
c = 1.43
w_inf = 6.0

[biology]
mu = 0.05
alpha_inf = 0.1
b_lice = 0.05
lambda_rep = 7.0143
H0 = 10000
lpf0 = 0.001
x_low = 0.995
beta1 = 0.0829
beta2 = 0.0281
threshold = 0.5

[costs]
s_hat0 = 95.0
conv = 1.1
c_tr = 0.015

[solver]
degree = 2
rcond = 1e-8
ridge = 0.0

[ingest]
region = "Trøndelag"
gap_weeks = 4

[calibrate]
zeta = 2.0
t_match = [1.77]
n_paths = 1000
"""
