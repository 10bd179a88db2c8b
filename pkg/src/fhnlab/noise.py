"""Two-sided Brownian paths and their stationary Ornstein-Uhlenbeck functionals.

A path is stored as Gaussian increments on a uniform grid together with the
index of time zero (``origin``).  Shifting a path by an aligned time only
moves the origin; the increments are shared.  OU values are computed once per
(path data, rate, component) on the absolute grid, so a shifted path sees
bit-identical OU values at the same absolute time.  This makes the cocycle
identity of the driven solver exact on aligned grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

OU_TRUNCATION_TOL = 1e-8
_ALIGN_RTOL = 1e-9


class OutOfWindowError(ValueError):
    """Requested time lies outside the stored path window."""


class AlignmentError(ValueError):
    """Requested time is not on the path grid."""


class _PathData:
    """Increment storage shared by a path and all of its shifts."""

    def __init__(self, increments: np.ndarray, dt: float, seed: int | None):
        inc = np.array(increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] != 2:
            raise ValueError("increments must have shape (2, n_intervals)")
        inc.setflags(write=False)
        self.increments = inc
        self.dt = float(dt)
        self.seed = seed
        cum = np.zeros((2, inc.shape[1] + 1))
        np.cumsum(inc, axis=1, out=cum[:, 1:])
        cum.setflags(write=False)
        self.cumulative = cum
        self._ou_cache: dict[tuple[float, int], tuple[np.ndarray, int]] = {}

    @property
    def n_intervals(self) -> int:
        return self.increments.shape[1]


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Two-sided piecewise-linear Brownian sample path ``omega = (w1, w2)``."""

    data: _PathData = field(repr=False)
    origin: int
    generated_origin: int = 0

    @classmethod
    def from_increments(cls, increments_1, increments_2, dt_path: float, origin: int,
                        seed: int | None = None) -> "WienerPath":
        """Build a path from explicit increments (test fixtures, replays)."""
        if not dt_path > 0:
            raise ValueError(f"dt_path must be positive, got {dt_path}")
        inc = np.vstack([np.asarray(increments_1, float), np.asarray(increments_2, float)])
        if not 0 <= origin <= inc.shape[1]:
            raise ValueError("origin must index a grid point of the stored window")
        return cls(_PathData(inc, dt_path, seed), int(origin), int(origin))

    @property
    def seed(self) -> int | None:
        return self.data.seed

    @property
    def dt_path(self) -> float:
        return self.data.dt

    @property
    def t_minus(self) -> float:
        return self.origin * self.dt_path

    @property
    def t_plus(self) -> float:
        return (self.data.n_intervals - self.origin) * self.dt_path

    @property
    def increments_1(self) -> np.ndarray:
        return self.data.increments[0]

    @property
    def increments_2(self) -> np.ndarray:
        return self.data.increments[1]

    @property
    def shift(self) -> float:
        """Total shift applied since generation."""
        return (self.origin - self.generated_origin) * self.dt_path

    def grid_index(self, t: float) -> int:
        """Absolute storage index of the aligned time ``t``."""
        k = t / self.dt_path
        kr = round(k)
        if abs(k - kr) > _ALIGN_RTOL * max(1.0, abs(k)):
            raise AlignmentError(f"time {t} is not a multiple of dt_path={self.dt_path}")
        m = self.origin + int(kr)
        if not 0 <= m <= self.data.n_intervals:
            raise OutOfWindowError(
                f"time {t} outside stored window [-{self.t_minus}, {self.t_plus}]")
        return m

    def grid_indices(self, t_grid) -> np.ndarray:
        """Vectorized :meth:`grid_index`."""
        t = np.atleast_1d(np.asarray(t_grid, dtype=float))
        k = t / self.dt_path
        kr = np.rint(k)
        if np.any(np.abs(k - kr) > _ALIGN_RTOL * np.maximum(1.0, np.abs(k))):
            raise AlignmentError(f"times not multiples of dt_path={self.dt_path}")
        m = self.origin + kr.astype(np.int64)
        if m.size and (m.min() < 0 or m.max() > self.data.n_intervals):
            raise OutOfWindowError(
                f"times [{t.min()}, {t.max()}] outside stored window "
                f"[-{self.t_minus}, {self.t_plus}]")
        return m

    def absolute_values(self) -> np.ndarray:
        """Path values on the full stored grid, relative to the current origin."""
        cum = self.data.cumulative
        return cum - cum[:, self.origin : self.origin + 1]

    def times(self) -> np.ndarray:
        return (np.arange(self.data.n_intervals + 1) - self.origin) * self.dt_path


def generate_path(seed: int, dt_path: float, t_minus: float, t_plus: float) -> WienerPath:
    """Sample a two-sided path on ``[-t_minus, t_plus]``.

    Each side and component draws from its own child stream of ``seed``,
    walking outward from zero, so enlarging the window keeps every existing
    increment.
    """
    if not dt_path > 0:
        raise ValueError(f"dt_path must be positive, got {dt_path}")
    if t_minus < 0 or t_plus < 0:
        raise ValueError("window extents must be nonnegative")
    n_minus = int(math.ceil(t_minus / dt_path - _ALIGN_RTOL))
    n_plus = int(math.ceil(t_plus / dt_path - _ALIGN_RTOL))
    streams = np.random.SeedSequence(int(seed)).spawn(4)
    sd = math.sqrt(dt_path)
    inc = np.empty((2, n_minus + n_plus))
    for comp in range(2):
        left = np.random.default_rng(streams[2 * comp]).standard_normal(n_minus) * sd
        right = np.random.default_rng(streams[2 * comp + 1]).standard_normal(n_plus) * sd
        inc[comp, :n_minus] = left[::-1]
        inc[comp, n_minus:] = right
    return WienerPath(_PathData(inc, dt_path, int(seed)), n_minus, n_minus)


def path_value(path: WienerPath, t: float) -> tuple[float, float]:
    """``omega(t)``: prefix sums at grid times, linear in between."""
    dt = path.dt_path
    if t < -path.t_minus - _ALIGN_RTOL * dt or t > path.t_plus + _ALIGN_RTOL * dt:
        raise OutOfWindowError(
            f"time {t} outside stored window [-{path.t_minus}, {path.t_plus}]")
    k = t / dt
    kr = round(k)
    if abs(k - kr) <= _ALIGN_RTOL * max(1.0, abs(k)):
        return _grid_value(path, int(kr))
    lo = math.floor(k)
    frac = k - lo
    a = _grid_value(path, lo)
    b = _grid_value(path, lo + 1)
    return ((1 - frac) * a[0] + frac * b[0], (1 - frac) * a[1] + frac * b[1])


def _grid_value(path: WienerPath, k: int) -> tuple[float, float]:
    o = path.origin
    inc = path.data.increments
    if k >= 0:
        seg = inc[:, o : o + k]
        return (float(np.sum(seg[0])), float(np.sum(seg[1])))
    seg = inc[:, o + k : o]
    return (-float(np.sum(seg[0])), -float(np.sum(seg[1])))


def theta_shift(path: WienerPath, s: float) -> WienerPath:
    """Wiener shift ``(theta_s omega)(tau) = omega(tau + s) - omega(s)``."""
    m = path.grid_index(s)  # raises on misalignment / overflow
    return WienerPath(path.data, m, path.generated_origin)


def refine(path: WienerPath, factor: int) -> WienerPath:
    """Same piecewise-linear path on a grid ``factor`` times finer."""
    if int(factor) != factor or factor < 1:
        raise ValueError("refinement factor must be a positive integer")
    factor = int(factor)
    if factor == 1:
        return path
    inc = np.repeat(path.data.increments / factor, factor, axis=1)
    data = _PathData(inc, path.dt_path / factor, path.seed)
    return WienerPath(data, path.origin * factor, path.generated_origin * factor)


def truncation_steps(rate: float, dt: float, tol: float = OU_TRUNCATION_TOL) -> int:
    """Number of grid steps ``K`` with ``exp(-rate * K * dt) <= tol``."""
    if not rate > 0:
        raise ValueError(f"OU rate must be positive, got {rate}")
    return int(math.ceil(math.log(1.0 / tol) / (rate * dt) - _ALIGN_RTOL))


def truncation_horizon(rate: float, dt: float, tol: float = OU_TRUNCATION_TOL) -> float:
    return truncation_steps(rate, dt, tol) * dt


def _trapezoid_kernel(rate: float, dt: float, K: int) -> np.ndarray:
    c = np.exp(-rate * dt * np.arange(K + 1))
    c[0] *= 0.5
    c[-1] *= 0.5
    return c


def ou_quadrature(values: np.ndarray, rate: float, dt: float) -> float:
    """Trapezoidal ``-rate * int_{-T}^0 e^{rate tau} w(tau) dtau``.

    ``values[i]`` is the shifted path at ``tau = -i * dt``.
    """
    values = np.asarray(values, dtype=float)
    c = _trapezoid_kernel(rate, dt, values.size - 1)
    return float(-rate * dt * np.dot(c, values))


def _ou_absolute(data: _PathData, rate: float, component: int) -> tuple[np.ndarray, int]:
    key = (float(rate), component)
    hit = data._ou_cache.get(key)
    if hit is not None:
        return hit
    K = truncation_steps(rate, data.dt)
    W = data.cumulative[component - 1]
    y = np.full(W.size, np.nan)
    if W.size > K:
        c = _trapezoid_kernel(rate, data.dt, K)
        conv = fftconvolve(W, c)[: W.size]
        y[K:] = -rate * data.dt * (conv[K:] - W[K:] * c.sum())
    y.setflags(write=False)
    data._ou_cache[key] = (y, K)
    return y, K


def _check_component(component: int) -> None:
    if component not in (1, 2):
        raise ValueError(f"component must be 1 or 2, got {component}")


def ou_evaluate(path: WienerPath, rate: float, component: int, t_grid) -> np.ndarray:
    """Stationary OU values ``y(theta_t omega)`` at the aligned times ``t_grid``."""
    _check_component(component)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    y, K = _ou_absolute(path.data, rate, component)
    idx = path.grid_indices(t_grid)
    if idx.size and idx.min() < K:
        need = truncation_horizon(rate, path.dt_path)
        raise OutOfWindowError(
            f"OU quadrature at t={t_grid.min()} needs the path back to "
            f"t={t_grid.min() - need}, stored window starts at -{path.t_minus}")
    return y[idx]


def ou_direct(path: WienerPath, rate: float, component: int, t: float) -> float:
    """Single-time quadrature from raw increments; independent of the FFT route."""
    _check_component(component)
    K = truncation_steps(rate, path.dt_path)
    m = path.grid_index(t)
    if m < K:
        raise OutOfWindowError(f"OU quadrature at t={t} needs {K} steps of history")
    inc = path.data.increments[component - 1, m - K : m][::-1]
    # (theta_t omega)(-i dt) = -(sum of the i increments just left of t)
    values = np.concatenate([[0.0], -np.cumsum(inc)])
    return ou_quadrature(values, rate, path.dt_path)


def ou_recursive(path: WienerPath, rate: float, component: int, t_grid) -> np.ndarray:
    """OU values by exact transition across consecutive grid intervals.

    Starts from the direct quadrature at ``t_grid[0]``.  On each interval the
    path is linear, so ``y' = -rate*y + dw/dt`` integrates in closed form.
    """
    _check_component(component)
    t_grid = np.asarray(t_grid, dtype=float)
    idx = [path.grid_index(t) for t in t_grid]
    out = np.empty(len(idx))
    out[0] = ou_direct(path, rate, component, t_grid[0])
    dt = path.dt_path
    decay = math.exp(-rate * dt)
    gain = -math.expm1(-rate * dt) / (rate * dt)
    inc = path.data.increments[component - 1]
    y = out[0]
    for j in range(1, len(idx)):
        a, b = idx[j - 1], idx[j]
        if b < a:
            raise ValueError("t_grid must be nondecreasing")
        for m in range(a, b):
            y = decay * y + gain * inc[m]
        out[j] = y
    return out


def ou_error_bound(path: WienerPath, rate: float, component: int, t_grid) -> float:
    """``exp(-rate*T_trunc) * sup |omega|`` over the quadrature windows used."""
    K = truncation_steps(rate, path.dt_path)
    idx = path.grid_indices(t_grid)
    W = path.data.cumulative[component - 1]
    sup = 0.0
    for m in (int(idx.min()), int(idx.max())):
        lo = max(m - K, 0)
        sup = max(sup, float(np.max(np.abs(W[lo : m + 1] - W[m]))))
    return math.exp(-rate * K * path.dt_path) * sup


@dataclass(frozen=True, eq=False)
class OuTrace:
    """OU values of both components on a time grid plus the tempered-radius estimate."""

    lambda_rate: float
    delta_rate: float
    t_grid: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    p: float
    eta: float
    r_hat: float
    trunc_horizon: float
    truncation_bound: float = 0.0


def tempered_radius(y_traces: OuTrace, p: float, eta: float) -> float:
    """``max_t exp(-(eta/2)|t|) * sum_j (|y_j|^2 + |y_j|^p)`` over the trace grid."""
    if len(y_traces.t_grid) == 0:
        raise ValueError("empty OU trace")
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    a1 = np.abs(y_traces.y1)
    a2 = np.abs(y_traces.y2)
    s = a1**2 + a1**p + a2**2 + a2**p
    w = np.exp(-0.5 * eta * np.abs(y_traces.t_grid))
    return float(np.max(w * s))


def ou_trace(path: WienerPath, lambda_rate: float, delta_rate: float, t_grid,
             p: float, eta: float | None = None) -> OuTrace:
    if eta is None:
        eta = min(lambda_rate, delta_rate)
    t_grid = np.asarray(t_grid, dtype=float)
    y1 = ou_evaluate(path, lambda_rate, 1, t_grid)
    y2 = ou_evaluate(path, delta_rate, 2, t_grid)
    bound = max(ou_error_bound(path, lambda_rate, 1, t_grid),
                ou_error_bound(path, delta_rate, 2, t_grid))
    trace = OuTrace(lambda_rate, delta_rate, t_grid, y1, y2, p, eta, 0.0,
                    max(truncation_horizon(lambda_rate, path.dt_path),
                        truncation_horizon(delta_rate, path.dt_path)),
                    bound)
    r_hat = tempered_radius(trace, p, eta)
    object.__setattr__(trace, "r_hat", r_hat)
    return trace


def path_csv_text(path: WienerPath, lambda_rate: float, delta_rate: float, t_grid) -> str:
    """``t,w1,w2,y1,y2`` rows on ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float)
    y1 = ou_evaluate(path, lambda_rate, 1, t_grid)
    y2 = ou_evaluate(path, delta_rate, 2, t_grid)
    rows = ["t,w1,w2,y1,y2"]
    for t, a, b in zip(t_grid, y1, y2):
        w1, w2 = path_value(path, float(t))
        rows.append(f"{float(t)!r},{float(w1)!r},{float(w2)!r},{float(a)!r},{float(b)!r}")
    return "\n".join(rows) + "\n"


def export_path(path: WienerPath, lambda_rate: float, delta_rate: float, t_grid,
                csv_path, sidecar_path=None) -> None:
    """Write ``t,w1,w2,y1,y2`` rows and a JSON sidecar for exact replay."""
    Path(csv_path).write_text(path_csv_text(path, lambda_rate, delta_rate, t_grid))
    if sidecar_path is None:
        sidecar_path = Path(csv_path).with_suffix(".json")
    Path(sidecar_path).write_text(json.dumps(path_metadata(path), indent=2, sort_keys=True) + "\n")


def path_metadata(path: WienerPath) -> dict:
    n = path.data.n_intervals
    return {
        "seed": path.seed,
        "dt_path": path.dt_path,
        "generated_t_minus": path.generated_origin * path.dt_path,
        "generated_t_plus": (n - path.generated_origin) * path.dt_path,
        "shift": path.shift,
    }


def replay_path(meta: dict) -> WienerPath:
    """Regenerate a path from :func:`path_metadata` output."""
    p = generate_path(meta["seed"], meta["dt_path"], meta["generated_t_minus"],
                      meta["generated_t_plus"])
    return theta_shift(p, meta["shift"]) if meta.get("shift") else p
