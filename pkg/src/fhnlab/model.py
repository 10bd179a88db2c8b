"""Model parameters, forcing/noise shapes and the reaction term ``f(x, s)``.

The reaction term is checked against the four structural inequalities

    (f1)  f(x, s) s      <= -alpha1 |s|^p + psi1(x)
    (f2)  |f(x, s)|      <=  alpha2 |s|^(p-1) + psi2(x)
    (f3)  df/ds (x, s)   <=  beta
    (f4)  |df/dx (x, s)| <=  psi3(x)

by dense deterministic sampling (:func:`certify_f`).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spatial import Field, Grid, read_field_csv

NONLINEARITY_KINDS = ("cubic", "cubic-with-bump", "user-table", "zero")
CERTIFY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficients and spatial data of the FitzHugh-Nagumo system.

    ``lam`` is the linear damping of ``u`` (``lambda`` is a Python keyword).
    The coupling constants ``alpha`` and ``beta`` may be zero, which
    decouples the two equations; every other coefficient must be positive.
    """

    lam: float
    alpha: float
    delta: float
    beta: float
    p: float
    alpha1: float
    alpha2: float
    g: Field
    h: Field
    phi1: Field
    phi2: Field
    psi1: Field
    psi2: Field
    psi3: Field

    def __post_init__(self):
        for name in ("lam", "delta", "alpha1", "alpha2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("alpha", "beta"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not self.p >= 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        grid = self.g.grid
        for name in ("h", "phi1", "phi2", "psi1", "psi2", "psi3"):
            if getattr(self, name).grid != grid:
                raise ValueError(f"field {name} is on a different grid than g")

    @property
    def grid(self) -> Grid:
        return self.g.grid

    @property
    def eta(self) -> float:
        return min(self.lam, self.delta)

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    def replace(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **changes)

    def without_noise(self) -> "ModelSpec":
        z = Field.zeros(self.grid)
        return self.replace(phi1=z, phi2=z)

    def without_forcing(self) -> "ModelSpec":
        z = Field.zeros(self.grid)
        return self.replace(g=z, h=z)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("lam", "alpha", "delta", "beta", "p", "alpha1", "alpha2")}


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Reaction term ``f(x, s)``.

    kinds:
      ``cubic``            f = -scale * s^3
      ``cubic-with-bump``  f = -s^3 + kappa * b(x) * s,  b a unit Gaussian bump
      ``user-table``       f = interp(s; table), independent of x
      ``zero``             f = 0
    """

    kind: str = "cubic"
    scale: float = 1.0
    kappa: float = 0.0
    bump_width: float = 1.0
    bump_center: float = 0.0
    table_s: np.ndarray | None = field(default=None, repr=False)
    table_f: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in NONLINEARITY_KINDS:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "user-table":
            if self.table_s is None or self.table_f is None:
                raise ValueError("user-table needs table_s and table_f")
            s = np.asarray(self.table_s, float)
            fv = np.asarray(self.table_f, float)
            if s.shape != fv.shape or s.size < 2 or np.any(np.diff(s) <= 0):
                raise ValueError("table_s must be strictly increasing and match table_f")
            object.__setattr__(self, "table_s", s)
            object.__setattr__(self, "table_f", fv)
        if self.kind == "cubic-with-bump" and not self.bump_width > 0:
            raise ValueError("bump_width must be positive")

    @classmethod
    def cubic(cls, scale: float = 1.0) -> "Nonlinearity":
        return cls("cubic", scale=scale)

    @classmethod
    def with_bump(cls, kappa: float, width: float = 1.0, center: float = 0.0) -> "Nonlinearity":
        return cls("cubic-with-bump", kappa=kappa, bump_width=width, bump_center=center)

    @classmethod
    def table(cls, s_values, f_values) -> "Nonlinearity":
        return cls("user-table", table_s=s_values, table_f=f_values)

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls("zero")

    def bump(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        r2 = np.sum((x - self.bump_center) ** 2, axis=-1)
        return np.exp(-0.5 * r2 / self.bump_width**2)

    def bump_gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return -(x - self.bump_center) / self.bump_width**2 * self.bump(x)[:, None]

    def bind(self, grid: Grid) -> Callable[[np.ndarray], np.ndarray]:
        """Fast evaluator ``s -> f(x_i, s_i)`` for arrays shaped ``(size,)`` or ``(size, B)``."""
        if self.kind == "cubic":
            c = self.scale
            return lambda s: -c * (s * s * s)
        if self.kind == "zero":
            return lambda s: np.zeros_like(s)
        if self.kind == "cubic-with-bump":
            kb = self.kappa * self.bump(grid.coords)
            kb_col = kb[:, None]

            def f(s):
                w = kb if s.ndim == 1 else kb_col
                return -(s * s * s) + w * s
            return f
        ts, tf = self.table_s, self.table_f
        return lambda s: np.interp(s, ts, tf)


def _pointwise_x(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def f_eval(nl: Nonlinearity, x, s):
    """``f(x, s)``; ``x`` is a point or an array of points broadcast against ``s``."""
    s = np.asarray(s, dtype=float)
    if nl.kind == "cubic":
        out = -nl.scale * s**3
    elif nl.kind == "zero":
        out = np.zeros_like(s)
    elif nl.kind == "cubic-with-bump":
        b = _bump_like(nl, x, s)
        out = -(s**3) + nl.kappa * b * s
    else:
        out = np.interp(s, nl.table_s, nl.table_f)
    return _scalar(out)


def f_ds(nl: Nonlinearity, x, s):
    s = np.asarray(s, dtype=float)
    if nl.kind == "cubic":
        out = -3.0 * nl.scale * s**2
    elif nl.kind == "zero":
        out = np.zeros_like(s)
    elif nl.kind == "cubic-with-bump":
        out = -3.0 * s**2 + nl.kappa * _bump_like(nl, x, s)
    else:
        # slope of the interpolant; np.interp clamps, so flat outside the table
        slopes = np.diff(nl.table_f) / np.diff(nl.table_s)
        k = np.clip(np.searchsorted(nl.table_s, s, side="right") - 1, 0, slopes.size - 1)
        out = slopes[k]
        out = np.where((s < nl.table_s[0]) | (s > nl.table_s[-1]), 0.0, out)
    return _scalar(out)


def f_dx(nl: Nonlinearity, x, s):
    """Magnitude ``|grad_x f(x, s)|``."""
    s = np.asarray(s, dtype=float)
    if nl.kind != "cubic-with-bump":
        return _scalar(np.zeros_like(s))
    xs = _pointwise_x(x)
    gnorm = np.linalg.norm(nl.bump_gradient(xs), axis=-1)
    return _scalar(np.abs(nl.kappa * _align(gnorm, xs, s) * s))


def _bump_like(nl: Nonlinearity, x, s: np.ndarray):
    xs = _pointwise_x(x)
    return _align(nl.bump(xs), xs, s)


def _align(values: np.ndarray, xs: np.ndarray, s: np.ndarray):
    # one value per x point, broadcast along trailing s axes
    if xs.shape[0] == 1:
        return values[0]
    return values.reshape(values.shape + (1,) * max(s.ndim - 1, 0))


def _scalar(out):
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


@dataclass
class CertificateReport:
    """Worst sampled margin per condition; PASS iff every margin >= -tol."""

    margins: dict[str, float]
    worst_at: dict[str, tuple[float, float]]
    n_points: int
    tol: float = CERTIFY_TOL

    @property
    def passed(self) -> bool:
        return all(m >= -self.tol for m in self.margins.values())

    @property
    def failed_conditions(self) -> list[str]:
        return [k for k, m in self.margins.items() if m < -self.tol]

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "margins": dict(self.margins),
            "worst_at": {k: list(v) for k, v in self.worst_at.items()},
            "failed": self.failed_conditions,
            "n_points": self.n_points,
            "tol": self.tol,
        }


def certify_f(nl: Nonlinearity, spec: ModelSpec, sample_box: dict | None = None,
              n_samples: int = 401) -> CertificateReport:
    """Check (f1)-(f4) on grid points inside ``sample_box`` times an ``s`` lattice.

    ``sample_box`` may hold ``"x": (lo, hi)`` (applied to every coordinate)
    and ``"s": (lo, hi)``; defaults are the whole grid and ``s in [-10, 10]``.
    The envelopes ``psi1..psi3`` are read at the grid points.
    """
    box = dict(sample_box or {})
    s_lo, s_hi = box.get("s", (-10.0, 10.0))
    if not s_hi >= s_lo or n_samples < 1:
        raise ValueError("sample box must be nonempty")
    grid = spec.grid
    coords = grid.coords
    mask = np.ones(grid.size, dtype=bool)
    if "x" in box:
        x_lo, x_hi = box["x"]
        mask = np.all((coords >= x_lo) & (coords <= x_hi), axis=1)
    if not mask.any():
        raise ValueError("sample box contains no grid points")
    xs = coords[mask]
    s = np.linspace(s_lo, s_hi, n_samples)
    if s_lo < 0 < s_hi:
        s = np.union1d(s, [0.0])
    S = np.broadcast_to(s, (xs.shape[0], s.size))
    psi1 = spec.psi1.values[mask][:, None]
    psi2 = spec.psi2.values[mask][:, None]
    psi3 = spec.psi3.values[mask][:, None]
    fv = f_eval(nl, xs, S)
    p = spec.p
    absS = np.abs(S)
    margins = {
        "f1": -spec.alpha1 * absS**p + psi1 - fv * S,
        "f2": spec.alpha2 * absS ** (p - 1) + psi2 - np.abs(fv),
        "f3": spec.beta - f_ds(nl, xs, S),
        "f4": psi3 - f_dx(nl, xs, S),
    }
    worst, where = {}, {}
    for key, m in margins.items():
        m = np.broadcast_to(m, S.shape)
        i, j = np.unravel_index(int(np.argmin(m)), m.shape)
        worst[key] = float(m[i, j])
        where[key] = (float(xs[i, 0]), float(s[j]))
    return CertificateReport(worst, where, int(S.size))


# ---------------------------------------------------------------------------
# spatial shapes

def gaussian_bump(grid: Grid, amplitude: float = 1.0, width: float = 1.0,
                  center: float = 0.0) -> Field:
    r2 = np.sum((grid.coords - center) ** 2, axis=1)
    return Field(grid, amplitude * np.exp(-0.5 * r2 / width**2))


def bump_envelopes(nl: Nonlinearity, grid: Grid, s_max: float) -> tuple[Field, Field, Field]:
    """Envelopes making ``cubic-with-bump`` satisfy (f1)-(f4) with alpha1=1/2, alpha2=2.

    (f4) involves ``kappa * |b'(x)| * |s|`` which is unbounded in ``s``; the
    returned ``psi3`` is only valid for ``|s| <= s_max``.
    """
    kb = nl.kappa * nl.bump(grid.coords)
    psi1 = 0.5 * kb**2
    psi2 = 2.0 / (3.0 * math.sqrt(3.0)) * np.abs(kb) ** 1.5
    psi3 = abs(nl.kappa) * np.linalg.norm(nl.bump_gradient(grid.coords), axis=1) * s_max
    return Field(grid, psi1), Field(grid, psi2), Field(grid, psi3)


_SHAPE_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_field(text: str, grid: Grid, base_dir=None) -> Field:
    """Parse an analytic shape such as ``gaussian(amplitude=1, width=2)``.

    Accepted: ``zero``, ``constant(value=c)``, ``gaussian(amplitude=, width=, center=)``,
    or ``csv:<path>`` for a field snapshot on the same grid.
    """
    text = text.strip()
    if text.startswith("csv:"):
        from pathlib import Path

        p = Path(text[4:].strip())
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        f = read_field_csv(p)
        if f.grid != grid:
            raise ValueError(f"field snapshot {p} is on grid {f.grid}, expected {grid}")
        return f
    m = _SHAPE_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse field shape {text!r}")
    name, args = m.group(1), m.group(2) or ""
    kwargs = {}
    for part in filter(None, (a.strip() for a in args.split(","))):
        k, _, v = part.partition("=")
        kwargs[k.strip()] = float(v)
    if name == "zero":
        return Field.zeros(grid)
    if name == "constant":
        return Field.constant(grid, kwargs.get("value", 0.0))
    if name == "gaussian":
        return gaussian_bump(grid, **kwargs)
    raise ValueError(f"unknown field shape {name!r}")


DEFAULT_SHAPES = {
    "g": "gaussian(amplitude=1.0, width=2.0)",
    "h": "gaussian(amplitude=0.5, width=2.0)",
    "phi1": "gaussian(amplitude=0.3, width=2.0)",
    "phi2": "gaussian(amplitude=0.3, width=2.0)",
    "psi1": "zero",
    "psi2": "zero",
    "psi3": "zero",
}

DEFAULT_COEFFICIENTS = {"lam": 1.0, "alpha": 1.0, "delta": 1.0, "beta": 1.0,
                        "p": 4.0, "alpha1": 1.0, "alpha2": 1.0}


def default_model(grid: Grid, **overrides) -> ModelSpec:
    """Cubic FitzHugh-Nagumo model with Gaussian forcing and noise shapes.

    Keyword overrides accept coefficients or field shape strings/Fields.
    """
    kw: dict = dict(DEFAULT_COEFFICIENTS)
    for name, shape in DEFAULT_SHAPES.items():
        kw[name] = shape
    kw.update(overrides)
    for name in DEFAULT_SHAPES:
        if isinstance(kw[name], str):
            kw[name] = parse_field(kw[name], grid)
    return ModelSpec(**kw)


def bistable_model(grid: Grid, kappa: float = 4.0, s_max: float = 10.0,
                   **overrides) -> tuple[ModelSpec, Nonlinearity]:
    """Localized bistable variant: ``f = -s^3 + kappa b(x) s``.

    ``beta`` is raised to ``kappa`` so that (f3) holds; ``alpha`` is lowered
    to keep the origin unstable inside the bump.  The noise is weak enough
    that well-to-well switching is rare over pullback horizons of order 40.
    """
    nl = Nonlinearity.with_bump(kappa, width=2.0)
    psi1, psi2, psi3 = bump_envelopes(nl, grid, s_max)
    kw = dict(alpha=0.25, beta=kappa, alpha1=0.5, alpha2=2.0,
              g="gaussian(amplitude=0.2, width=2.0)", h="zero",
              phi1="gaussian(amplitude=0.1, width=2.0)",
              phi2="gaussian(amplitude=0.1, width=2.0)",
              psi1=psi1, psi2=psi2, psi3=psi3)
    kw.update(overrides)
    return default_model(grid, **kw), nl
