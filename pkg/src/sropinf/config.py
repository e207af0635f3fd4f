"""Run configuration: a YAML file with a fixed schema and protocol defaults.

Example (all keys optional; the defaults reproduce the drifting KSE study)::

    model: {name: kse, nu: 4/87}
    grid: {L: 2pi, n_modes: 20, n_grid: 40}
    fom:
      dt: 1.0e-3
      record_interval: 0.01
      t_final: 130
      scheme: ars343
      velocities: exact
      initial_condition: [[1, sin, -1], [2, cos, 2], [3, cos, 3], [4, sin, -4]]
      windows: {train: [120, 130], test: [30, 40]}
    template: [[1, cos, 1]]
    rom:
      n: 4
      lam: 1.0
      regularizer: none
      reg_weight: 0.0
      cg_max_iters: 500
      cg_rel_residual: 1.0e-13
      cg_preconditioner: svd      # or none (plain CGLS)
      sweep_dims: [4, 5, 6, 7, 8]
      integrator: {h0: 1.0e-3, tol: 1.0e-6, h_min: 1.0e-5, h_max: null,
                   error_norm: l2, shift_accumulation: step, land_on_samples: false}
    paths: {output: runs/kse}
    seed: 0

Numbers may be written as fractions (``4/87``) or multiples of pi (``2pi``).
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import yaml

from .errors import ConfigError
from .models import SCHEMES, FomConfig, QuadraticPde, advection_diffusion, kse
from .opinf_train import TrainingConfig
from .rom_core import IntegratorConfig
from .spectral_field import Field, Grid
from .symmetry import Template

__all__ = ["DEFAULT_CONFIG", "RunConfig", "load_config", "parse_number"]

DEFAULT_CONFIG = {
    "model": {"name": "kse", "nu": "4/87", "a": 1.0, "kappa": 0.1},
    "grid": {"L": "2pi", "n_modes": 20, "n_grid": 40},
    "fom": {
        "dt": 1.0e-3,
        "record_interval": 0.01,
        "t_final": 130.0,
        "scheme": "ars343",
        "velocities": "exact",
        "initial_condition": [[1, "sin", -1.0], [2, "cos", 2.0], [3, "cos", 3.0], [4, "sin", -4.0]],
        "windows": {"train": [120.0, 130.0], "test": [30.0, 40.0]},
    },
    "template": [[1, "cos", 1.0]],
    "rom": {
        "n": 4,
        "lam": 1.0,
        "regularizer": "none",
        "reg_weight": 0.0,
        "cg_max_iters": 500,
        "cg_rel_residual": 1.0e-13,
        "cg_preconditioner": "svd",
        "sweep_dims": [4, 5, 6, 7, 8],
        "integrator": {
            "h0": 1.0e-3, "tol": 1.0e-6, "h_min": 1.0e-5, "h_max": None,
            "error_norm": "l2", "shift_accumulation": "step", "land_on_samples": False,
        },
    },
    "paths": {"output": "runs/kse"},
    "seed": 0,
}

_PI = re.compile(r"^\s*([-+]?\d*\.?\d*)\s*\*?\s*pi\s*$")


def parse_number(v, what: str = "value") -> float:
    """Accept numbers, fraction strings (``"4/87"``) and multiples of pi (``"2pi"``)."""
    if isinstance(v, bool):
        raise ConfigError(f"{what}: expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        m = _PI.match(v)
        if m:
            coef = m.group(1)
            return (float(coef) if coef not in ("", "+", "-") else float(coef + "1")) * math.pi
        try:
            return float(Fraction(v.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"{what}: cannot parse {v!r} as a number")


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown configuration key '{path}{k}'")
        if isinstance(base[k], dict) and base[k] and k != "windows":
            if not isinstance(v, dict):
                raise ConfigError(f"'{path}{k}' must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def _terms(spec, what):
    if not isinstance(spec, (list, tuple)) or not spec:
        raise ConfigError(f"{what}: expected a non-empty list of [k, sin|cos, amplitude]")
    out = []
    for t in spec:
        if not isinstance(t, (list, tuple)) or len(t) != 3 or str(t[1]).lower() not in ("sin", "cos"):
            raise ConfigError(f"{what}: bad term {t!r}")
        out.append((int(t[0]), str(t[1]).lower(), parse_number(t[2], what)))
    return out


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration; ``raw`` keeps the merged mapping for manifests."""

    raw: dict

    # -- builders -----------------------------------------------------------
    @property
    def grid(self) -> Grid:
        g = self.raw["grid"]
        try:
            return Grid(parse_number(g["L"], "grid.L"), int(g["n_modes"]), int(g["n_grid"]))
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    @property
    def pde(self) -> QuadraticPde:
        m = self.raw["model"]
        name = m["name"]
        if name == "kse":
            return kse(parse_number(m["nu"], "model.nu"), self.grid)
        if name == "advection_diffusion":
            return advection_diffusion(parse_number(m["a"], "model.a"),
                                       parse_number(m["kappa"], "model.kappa"), self.grid)
        raise ConfigError(f"model.name must be 'kse' or 'advection_diffusion', got {name!r}")

    @property
    def fom(self) -> FomConfig:
        f = self.raw["fom"]
        try:
            return FomConfig(parse_number(f["dt"], "fom.dt"), parse_number(f["t_final"], "fom.t_final"),
                             parse_number(f["record_interval"], "fom.record_interval"), f["scheme"])
        except ValueError as exc:
            raise ConfigError(f"fom: {exc}") from None

    @property
    def initial_condition(self) -> Field:
        return Field.from_modes(self.grid, _terms(self.raw["fom"]["initial_condition"],
                                                  "fom.initial_condition"))

    @property
    def template(self) -> Template:
        try:
            return Template(Field.from_modes(self.grid, _terms(self.raw["template"], "template")))
        except ValueError as exc:
            raise ConfigError(f"template: {exc}") from None

    @property
    def windows(self) -> dict:
        return {k: (parse_number(v[0]), parse_number(v[1]))
                for k, v in self.raw["fom"]["windows"].items()}

    @property
    def training(self) -> TrainingConfig:
        r = self.raw["rom"]
        try:
            return TrainingConfig(parse_number(r["lam"], "rom.lam"), r["regularizer"],
                                  parse_number(r["reg_weight"], "rom.reg_weight"),
                                  int(r["cg_max_iters"]), parse_number(r["cg_rel_residual"]),
                                  str(r.get("cg_preconditioner", "svd")))
        except ValueError as exc:
            raise ConfigError(f"rom: {exc}") from None

    @property
    def integrator(self) -> IntegratorConfig:
        i = self.raw["rom"]["integrator"]
        try:
            return IntegratorConfig(
                parse_number(i["h0"]), parse_number(i["tol"]), parse_number(i["h_min"]),
                None if i["h_max"] is None else parse_number(i["h_max"]),
                i["error_norm"], i["shift_accumulation"], bool(i["land_on_samples"]),
            )
        except ValueError as exc:
            raise ConfigError(f"rom.integrator: {exc}") from None

    @property
    def n(self) -> int:
        return int(self.raw["rom"]["n"])

    @property
    def sweep_dims(self) -> list:
        return [int(v) for v in self.raw["rom"]["sweep_dims"]]

    @property
    def output(self) -> Path:
        return Path(self.raw["paths"]["output"])

    @property
    def velocities(self) -> str:
        return self.raw["fom"]["velocities"]

    def validate(self) -> "RunConfig":
        """Build every section once so errors surface before any work starts."""
        self.grid, self.pde, self.template, self.training, self.integrator
        fom = self.fom
        if self.raw["fom"]["scheme"] not in SCHEMES:
            raise ConfigError(f"fom.scheme must be one of {sorted(SCHEMES)}")
        if self.velocities not in ("exact", "finite-difference"):
            raise ConfigError("fom.velocities must be 'exact' or 'finite-difference'")
        self.initial_condition
        if not isinstance(self.raw["fom"]["windows"], dict) or not self.raw["fom"]["windows"]:
            raise ConfigError("fom.windows must map names to [t_start, t_end]")
        for name, (a, b) in self.windows.items():
            if not 0 <= a < b:
                raise ConfigError(f"window '{name}' must satisfy 0 <= start < end, got [{a}, {b}]")
            if b > fom.t_final + 1e-9:
                raise ConfigError(
                    f"window '{name}' ends at {b} beyond the simulated horizon t_final={fom.t_final}"
                )
        if self.n < 1:
            raise ConfigError("rom.n must be positive")
        return self


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read and validate a YAML configuration (``None`` gives the defaults)."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"configuration file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: not valid YAML ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    merged = _merge(DEFAULT_CONFIG, data)
    if overrides:
        merged = _merge(merged, overrides)
    return RunConfig(merged).validate()
