"""Experiment configuration: INI file + dotted overrides, validated up front.

Schema (all keys optional, defaults in :data:`DEFAULTS`)::

    [model]       lambda alpha delta beta p alpha1 alpha2
                  nonlinearity (cubic | cubic-with-bump | zero | user-table)
                  scale kappa bump_width table_file
                  g h phi1 phi2 psi1 psi2 psi3   (shape strings, see model.parse_field)
    [grid]        dim L n boundary
    [noise]       seeds dt_path t_minus t_plus   (window auto-sized when blank)
    [solve]       dt scheme record_every t_end horizons
    [experiment]  initial_radius initial_radii ensemble_size ensemble_seed
                  tail_radii epsilon cluster_tol invariance_shift absorb_factor
                  test_ball_size workers

Lists are comma separated.  ``csv:`` field paths and ``table_file`` are
resolved relative to the config file.
"""

from __future__ import annotations

import configparser
import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelSpec, Nonlinearity, parse_field
from .noise import truncation_horizon
from .solver import SCHEMES, SolveConfig, check_alignment
from .spatial import BOUNDARIES, Grid

DEFAULTS: dict[str, dict[str, str]] = {
    "model": {
        "lambda": "1.0", "alpha": "1.0", "delta": "1.0", "beta": "1.0", "p": "4.0",
        "alpha1": "1.0", "alpha2": "1.0",
        "nonlinearity": "cubic", "scale": "1.0", "kappa": "0.0", "bump_width": "2.0",
        "table_file": "",
        "g": "gaussian(amplitude=1.0, width=2.0)",
        "h": "gaussian(amplitude=0.5, width=2.0)",
        "phi1": "gaussian(amplitude=0.3, width=2.0)",
        "phi2": "gaussian(amplitude=0.3, width=2.0)",
        "psi1": "zero", "psi2": "zero", "psi3": "zero",
    },
    "grid": {"dim": "1", "L": "20.0", "n": "512", "boundary": "dirichlet"},
    "noise": {"seeds": "0", "dt_path": "0.001", "t_minus": "", "t_plus": ""},
    "solve": {"dt": "0.001", "scheme": "imex-be", "record_every": "100", "t_end": "5.0",
              "horizons": "10.0, 20.0, 40.0"},
    "experiment": {
        "initial_radius": "10.0", "initial_radii": "1, 10, 100", "ensemble_size": "8",
        "ensemble_seed": "0", "tail_radii": "2, 4, 6, 8", "epsilon": "1e-4",
        "cluster_tol": "0.01", "invariance_shift": "1.0", "absorb_factor": "2.0",
        "test_ball_size": "4", "workers": "1",
    },
}


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics))


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(";", ",").split(",") if x.strip()]


def load_raw(path=None, overrides=()) -> dict[str, dict[str, str]]:
    """Merge defaults, an INI file (or a manifest.json) and ``section.key=value`` overrides."""
    raw = copy.deepcopy(DEFAULTS)
    base_dir = None
    if path is not None:
        path = Path(path)
        base_dir = path.resolve().parent
        text = path.read_text()
        if path.suffix == ".json":
            manifest = json.loads(text)
            src = manifest.get("config", manifest)
            for sec, kv in src.items():
                raw.setdefault(sec, {}).update({k: str(v) for k, v in kv.items()})
            base_dir = None  # manifest paths are already absolute
        else:
            cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
            cp.optionxform = str
            cp.read_string(text)
            for sec in cp.sections():
                raw.setdefault(sec, {}).update(dict(cp.items(sec)))
    for item in overrides:
        key, sep, value = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError([f"override {item!r}: expected section.key=value"])
        raw.setdefault(sec, {})[name] = value.strip()
    if base_dir is not None:
        _absolutize(raw, base_dir)
    return raw


def _absolutize(raw: dict, base_dir: Path) -> None:
    m = raw["model"]
    for key in ("g", "h", "phi1", "phi2", "psi1", "psi2", "psi3"):
        v = m.get(key, "").strip()
        if v.startswith("csv:") and not Path(v[4:].strip()).is_absolute():
            m[key] = "csv:" + str(base_dir / v[4:].strip())
    tf = m.get("table_file", "").strip()
    if tf and not Path(tf).is_absolute():
        m["table_file"] = str(base_dir / tf)


@dataclass
class ExperimentConfig:
    """Typed view of a raw configuration."""

    raw: dict

    # --- grid / model -----------------------------------------------------
    @property
    def grid(self) -> Grid:
        g = self.raw["grid"]
        return Grid(int(g["dim"]), float(g["L"]), int(g["n"]), g["boundary"].strip())

    def model(self) -> tuple[ModelSpec, Nonlinearity]:
        m = self.raw["model"]
        grid = self.grid
        fields = {k: parse_field(m[k], grid) for k in
                  ("g", "h", "phi1", "phi2", "psi1", "psi2", "psi3")}
        spec = ModelSpec(lam=float(m["lambda"]), alpha=float(m["alpha"]),
                         delta=float(m["delta"]), beta=float(m["beta"]), p=float(m["p"]),
                         alpha1=float(m["alpha1"]), alpha2=float(m["alpha2"]), **fields)
        return spec, self.nonlinearity()

    def nonlinearity(self) -> Nonlinearity:
        m = self.raw["model"]
        kind = m["nonlinearity"].strip()
        if kind == "cubic":
            return Nonlinearity.cubic(float(m["scale"]))
        if kind == "cubic-with-bump":
            return Nonlinearity.with_bump(float(m["kappa"]), float(m["bump_width"]))
        if kind == "zero":
            return Nonlinearity.zero()
        if kind == "user-table":
            tbl = np.loadtxt(m["table_file"], delimiter=",", ndmin=2)
            return Nonlinearity.table(tbl[:, 0], tbl[:, 1])
        raise ValueError(f"unknown nonlinearity {kind!r}")

    # --- noise / solve ----------------------------------------------------
    @property
    def seeds(self) -> list[int]:
        return _ints(self.raw["noise"]["seeds"])

    @property
    def dt_path(self) -> float:
        return float(self.raw["noise"]["dt_path"])

    @property
    def solve(self) -> SolveConfig:
        s = self.raw["solve"]
        return SolveConfig(float(s["dt"]), s["scheme"].strip(), int(s["record_every"]))

    @property
    def t_end(self) -> float:
        return float(self.raw["solve"]["t_end"])

    @property
    def horizons(self) -> list[float]:
        return sorted(_floats(self.raw["solve"]["horizons"]))

    def window(self) -> tuple[float, float]:
        """Path window ``(t_minus, t_plus)``: explicit values or sized from the experiment."""
        n = self.raw["noise"]
        m = self.raw["model"]
        rate = min(float(m["lambda"]), float(m["delta"]))
        trunc = truncation_horizon(rate, min(self.dt_path, self.solve.dt))
        need_minus = max(self.horizons + [0.0]) + trunc + self.invariance_shift
        need_plus = max(self.t_end, self.invariance_shift)
        t_minus = float(n["t_minus"]) if n.get("t_minus", "").strip() else need_minus
        t_plus = float(n["t_plus"]) if n.get("t_plus", "").strip() else need_plus
        return t_minus, t_plus

    # --- experiment ----------------------------------------------------------
    def _exp(self, key: str) -> str:
        return self.raw["experiment"][key]

    @property
    def initial_radius(self) -> float:
        return float(self._exp("initial_radius"))

    @property
    def initial_radii(self) -> list[float]:
        return _floats(self._exp("initial_radii"))

    @property
    def ensemble_size(self) -> int:
        return int(self._exp("ensemble_size"))

    @property
    def ensemble_seed(self) -> int:
        return int(self._exp("ensemble_seed"))

    @property
    def tail_radii(self) -> list[float]:
        return _floats(self._exp("tail_radii"))

    @property
    def epsilon(self) -> float:
        return float(self._exp("epsilon"))

    @property
    def cluster_tol(self) -> float:
        return float(self._exp("cluster_tol"))

    @property
    def invariance_shift(self) -> float:
        return float(self._exp("invariance_shift"))

    @property
    def absorb_factor(self) -> float:
        return float(self._exp("absorb_factor"))

    @property
    def test_ball_size(self) -> int:
        return int(self._exp("test_ball_size"))

    @property
    def workers(self) -> int:
        return int(self._exp("workers"))


def validate(cfg: ExperimentConfig | dict) -> list[str]:
    """All invariant violations as ``section.key: message`` strings (empty iff runnable)."""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig(cfg)
    raw = cfg.raw
    diags: list[str] = []

    def check(path: str, fn):
        try:
            msg = fn()
        except (ValueError, KeyError, TypeError, OSError) as exc:
            msg = str(exc) or exc.__class__.__name__
        if msg:
            diags.append(f"{path}: {msg}")

    g = raw["grid"]
    check("grid.dim", lambda: None if g["dim"].strip() in ("1", "2") else "must be 1 or 2")
    check("grid.L", lambda: None if float(g["L"]) > 0 else "must be positive")
    check("grid.n", lambda: None if int(g["n"]) >= 3 else "must be an integer >= 3")
    check("grid.boundary",
          lambda: None if g["boundary"].strip() in BOUNDARIES else f"must be one of {BOUNDARIES}")
    grid_ok = not any(d.startswith("grid.") for d in diags)

    m = raw["model"]
    for key in ("lambda", "delta", "alpha1", "alpha2"):
        check(f"model.{key}", lambda key=key: None if float(m[key]) > 0 else "must be positive")
    for key in ("alpha", "beta"):
        check(f"model.{key}", lambda key=key: None if float(m[key]) >= 0 else "must be nonnegative")
    check("model.p", lambda: None if float(m["p"]) >= 2 else "must be >= 2")
    check("model.nonlinearity", lambda: cfg.nonlinearity() and None)
    if grid_ok:
        grid = cfg.grid
        for key in ("g", "h", "phi1", "phi2", "psi1", "psi2", "psi3"):
            check(f"model.{key}", lambda key=key: parse_field(m[key], grid) and None)

    s = raw["solve"]
    check("solve.dt", lambda: None if float(s["dt"]) > 0 else "must be positive")
    check("solve.scheme",
          lambda: None if s["scheme"].strip() in SCHEMES else f"must be one of {SCHEMES}")
    check("solve.record_every",
          lambda: None if int(s["record_every"]) >= 1 else "must be an integer >= 1")
    check("noise.dt_path", lambda: None if cfg.dt_path > 0 else "must be positive")
    check("noise.seeds", lambda: None if cfg.seeds else "need at least one seed")
    dt_ok = not any(d.startswith(("solve.dt", "noise.dt_path")) for d in diags)
    if dt_ok:
        check("solve.dt", lambda: check_alignment(float(s["dt"]), cfg.dt_path) and None)
        step = max(float(s["dt"]), cfg.dt_path)
        dt_ok = not any(d.startswith("solve.dt") for d in diags)

    def aligned(t: float) -> bool:
        k = t / step
        return abs(k - round(k)) <= 1e-9 * max(1.0, k)

    def check_horizons():
        hs = cfg.horizons
        if not hs or min(hs) <= 0:
            return "need positive horizons"
        if dt_ok and not all(aligned(h) for h in hs):
            return f"horizons must be multiples of {step}"
        return None

    check("solve.horizons", check_horizons)
    check("solve.t_end", lambda: None if cfg.t_end >= 0 and (not dt_ok or aligned(cfg.t_end))
          else "must be a nonnegative multiple of the time step")
    check("experiment.invariance_shift",
          lambda: None if cfg.invariance_shift >= 0 and (not dt_ok or aligned(cfg.invariance_shift))
          else "must be a nonnegative multiple of the time step")

    def check_window():
        n = raw["noise"]
        rate = min(float(m["lambda"]), float(m["delta"]))
        trunc = truncation_horizon(rate, min(cfg.dt_path, float(s["dt"])))
        out = []
        if n.get("t_minus", "").strip():
            tm = float(n["t_minus"])
            need = max(cfg.horizons) + trunc
            if tm < need:
                out.append(f"t_minus={tm} < largest horizon + OU truncation horizon = {need:g}")
        if n.get("t_plus", "").strip():
            tp = float(n["t_plus"])
            if tp < cfg.t_end:
                out.append(f"t_plus={tp} < t_end={cfg.t_end}")
        return "; ".join(out) or None

    if not any(d.startswith(("model.lambda", "model.delta", "solve.horizons")) for d in diags):
        check("noise.window", check_window)

    if grid_ok:
        L = float(g["L"])
        check("experiment.tail_radii",
              lambda: None if all(0 < k < L for k in cfg.tail_radii)
              else f"tail radii must lie in (0, L={L})")
    check("experiment.initial_radius",
          lambda: None if cfg.initial_radius >= 0 else "must be nonnegative")
    check("experiment.initial_radii",
          lambda: None if cfg.initial_radii and min(cfg.initial_radii) >= 0
          else "need nonnegative radii")
    check("experiment.ensemble_size",
          lambda: None if cfg.ensemble_size >= 1 else "must be >= 1")
    check("experiment.epsilon", lambda: None if cfg.epsilon > 0 else "must be positive")
    check("experiment.cluster_tol", lambda: None if cfg.cluster_tol > 0 else "must be positive")
    check("experiment.workers", lambda: None if cfg.workers >= 1 else "must be >= 1")
    if not math.isfinite(float(g.get("L", "nan") or "nan")):
        diags.append("grid.L: must be finite")
    return diags
