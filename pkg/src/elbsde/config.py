"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment, blank lines are ignored. Unset
keys take their defaults. Keys:

* model: every :class:`ModelParams` field by name (``a``, ``b``, ``sigma_x``,
  ..., ``alpha``, ``T``, ``T_star``) and correlations ``rho_ij`` with
  ``1 <= i < j <= 5`` in the order ``(x, y, F, v, lambda)``;
* initial state: ``x0``, ``y0``, ``F0``, ``v0``, ``lambda0``, ``J0``;
* training: ``epochs``, ``batch_size``, ``pool_size``, ``dt``, ``seed``,
  ``fresh_paths``, ``lr``, ``region`` (``around`` or ``point``),
  ``region_spread``, ``region_rate_width``;
* guarantee example: ``gmmb_r``, ``gmmb_sigma_f``, ``gmmb_lambda``,
  ``gmmb_s_star``, ``gmmb_F0``, ``gmmb_T``, ``gmmb_n``, ``gmmb_alpha``;
* commands: ``out_dir``, ``checkpoint``, ``bel_sims``, ``gmmb_sims``,
  ``grid_feature1``, ``grid_feature2``, ``grid_points``, ``grid_lo1``,
  ``grid_hi1``, ``grid_lo2``, ``grid_hi2``, ``bump``, ``bump_targets``,
  ``alpha_sweep``, ``simulate_paths``, ``measure``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .bsde.train import TrainConfig
from .errors import InvariantViolation, ParseError
from .model import BASE_CORR, ModelParams, State
from .oracle import GmmbParams
from .scenario import GridSpec, InitRegion, Measure

_MODEL_KEYS = [f.name for f in dataclasses.fields(ModelParams) if f.name != "corr"]
_CORR_KEYS = {f"rho_{i + 1}{j + 1}": (i, j) for i in range(5) for j in range(i + 1, 5)}
_STATE_KEYS = {"x0": "x", "y0": "y", "F0": "f", "v0": "v", "lambda0": "lam", "J0": "k"}
_GMMB_KEYS = {
    "gmmb_r": "r", "gmmb_sigma_f": "sigma_f", "gmmb_lambda": "lam_const", "gmmb_s_star": "s_star",
    "gmmb_F0": "F0", "gmmb_T": "T", "gmmb_n": "n", "gmmb_alpha": "alpha",
}
FEATURE_NAMES = ("x", "y", "F", "v", "lambda", "J")

_OPTION_DEFAULTS = {
    "epochs": 200,
    "batch_size": 200,
    "pool_size": 10_000,
    "dt": 0.01,
    "seed": 0,
    "fresh_paths": False,
    "lr": 1e-3,
    "region": "around",
    "region_spread": 0.25,
    "region_rate_width": 0.01,
    "out_dir": "out",
    "checkpoint": "out/model.ckpt",
    "bel_sims": 200_000,
    "gmmb_sims": 200_000,
    "grid_feature1": "x",
    "grid_feature2": "y",
    "grid_points": 11,
    "grid_lo1": None,
    "grid_hi1": None,
    "grid_lo2": None,
    "grid_hi2": None,
    "bump": 0.1,
    "bump_targets": "rho_13,rho_34",
    "alpha_sweep": "0,0.05,0.1,0.15",
    "simulate_paths": 100,
    "measure": "risk_adjusted",
}
_OPTION_TYPES = {
    "epochs": int, "batch_size": int, "pool_size": int, "seed": int, "bel_sims": int, "gmmb_sims": int,
    "grid_points": int, "simulate_paths": int, "fresh_paths": bool,
    "region": str, "out_dir": str, "checkpoint": str, "grid_feature1": str, "grid_feature2": str,
    "bump_targets": str, "alpha_sweep": str, "measure": str,
}


@dataclass
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    state: State = field(default_factory=State)
    gmmb: GmmbParams = field(default_factory=GmmbParams)
    options: dict = field(default_factory=lambda: dict(_OPTION_DEFAULTS))

    @property
    def out_dir(self) -> str:
        return self.options["out_dir"]

    @property
    def checkpoint(self) -> str:
        return self.options["checkpoint"]

    @property
    def seed(self) -> int:
        return self.options["seed"]

    def region(self) -> InitRegion:
        o = self.options
        if o["region"] == "point":
            return InitRegion.point(self.state)
        return InitRegion.around(self.state, o["region_spread"], o["region_rate_width"])

    def grid(self, T: float | None = None) -> GridSpec:
        return GridSpec.from_horizon(self.params.T if T is None else T, self.options["dt"])

    def train_config(self, region: InitRegion | None = None, base_state: State | None = None,
                     T: float | None = None) -> TrainConfig:
        o = self.options
        return TrainConfig(
            epochs=o["epochs"], batch_size=o["batch_size"], pool_size=o["pool_size"], grid=self.grid(T),
            region=self.region() if region is None else region, seed=o["seed"],
            fresh_paths=o["fresh_paths"], base_state=self.state if base_state is None else base_state,
            lr=o["lr"],
        )

    def with_options(self, **kw) -> "RunConfig":
        opts = dict(self.options)
        opts.update(kw)
        out = RunConfig(self.params, self.state, self.gmmb, opts)
        _validate_options(out)
        return out


def _convert(key, text, kind, line):
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {text!r}")
            return low in ("true", "1", "yes")
        if kind is int:
            value = float(text)
            if value != int(value):
                raise ValueError(f"not an integer: {text!r}")
            return int(value)
        if kind is str:
            return text
        if text.lower() == "none":
            return None
        return float(text)
    except ValueError as exc:
        raise ParseError(f"{key}: {exc}", line) from None


def _validate_options(cfg: RunConfig):
    o = cfg.options
    if o["region"] not in ("around", "point"):
        raise InvariantViolation("region", "must be 'around' or 'point'")
    for name in ("grid_feature1", "grid_feature2"):
        if o[name] not in FEATURE_NAMES:
            raise InvariantViolation(name, f"must be one of {FEATURE_NAMES}")
    if o["grid_points"] < 2:
        raise InvariantViolation("grid_points", "need at least 2 points")
    for name in ("bel_sims", "gmmb_sims", "simulate_paths"):
        if o[name] < 2:
            raise InvariantViolation(name, "need at least 2")
    if not o["region_spread"] >= 0 or not o["region_rate_width"] >= 0:
        raise InvariantViolation("region_spread", "must be non-negative")
    try:
        Measure(o["measure"])
    except ValueError:
        raise InvariantViolation("measure", "must be 'real_world' or 'risk_adjusted'") from None
    for t in o["bump_targets"].split(","):
        if t.strip() not in _CORR_KEYS:
            raise InvariantViolation("bump_targets", f"unknown correlation {t!r}")
    try:
        alphas = [float(a) for a in o["alpha_sweep"].split(",")]
    except ValueError:
        raise InvariantViolation("alpha_sweep", "comma-separated numbers expected") from None
    if any(a < 0 for a in alphas):
        raise InvariantViolation("alpha_sweep", "alphas must be non-negative")
    s = cfg.state
    if not s.f > 0:
        raise InvariantViolation("F0", "must be positive")
    if s.v < 0:
        raise InvariantViolation("v0", "must be non-negative")
    if s.lam < 0:
        raise InvariantViolation("lambda0", "must be non-negative")
    if s.k < 0:
        raise InvariantViolation("J0", "must be non-negative")
    cfg.train_config()  # grid and training invariants


def parse_config(text: str) -> RunConfig:
    model_kw, state_kw, gmmb_kw = {}, {}, {}
    corr = np.array(BASE_CORR)
    options = dict(_OPTION_DEFAULTS)
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ParseError("empty key or value", lineno)
        if key in seen:
            raise ParseError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        if key in _MODEL_KEYS:
            model_kw[key] = _convert(key, value, float, lineno)
        elif key in _CORR_KEYS:
            i, j = _CORR_KEYS[key]
            corr[i, j] = corr[j, i] = _convert(key, value, float, lineno)
        elif key in _STATE_KEYS:
            state_kw[_STATE_KEYS[key]] = _convert(key, value, int if key == "J0" else float, lineno)
        elif key in _GMMB_KEYS:
            gmmb_kw[_GMMB_KEYS[key]] = _convert(key, value, int if key == "gmmb_n" else float, lineno)
        elif key in options:
            options[key] = _convert(key, value, _OPTION_TYPES.get(key, float), lineno)
        else:
            raise ParseError(f"unknown key {key!r}", lineno)
    for k, v in model_kw.items():
        if v is None and k != "T_star":
            raise InvariantViolation(k, "a value is required")
        if v is not None and not math.isfinite(v):
            raise InvariantViolation(k, "must be finite")
    cfg = RunConfig(ModelParams(**model_kw, corr=corr), State(**state_kw), GmmbParams(**gmmb_kw), options)
    _validate_options(cfg)
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return parse_config("")
    with open(path) as fh:
        return parse_config(fh.read())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    if v is None:
        return "none"
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    lines = ["# model"]
    for key in _MODEL_KEYS:
        lines.append(f"{key} = {_fmt(getattr(cfg.params, key))}")
    for key, (i, j) in _CORR_KEYS.items():
        lines.append(f"{key} = {_fmt(float(cfg.params.corr[i, j]))}")
    lines.append("# initial state")
    for key, attr in _STATE_KEYS.items():
        lines.append(f"{key} = {_fmt(getattr(cfg.state, attr))}")
    lines.append("# guarantee example")
    for key, attr in _GMMB_KEYS.items():
        lines.append(f"{key} = {_fmt(getattr(cfg.gmmb, attr))}")
    lines.append("# training and commands")
    for key, value in cfg.options.items():
        if value is not None:
            lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))
