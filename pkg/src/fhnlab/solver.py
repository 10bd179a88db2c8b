"""Pathwise solver for the transformed FitzHugh-Nagumo system.

With ``z_j(theta_t omega) = phi_j * y_j(theta_t omega_j)`` the shifted
unknowns ``u~ = u - z1``, ``v~ = v - z2`` satisfy the random PDE

    du~/dt + lam u~ - lap u~ + alpha v~ = f(x, u~ + z1) + g + lap z1 - alpha z2
    dv~/dt + delta v~ - beta u~         = h + beta z1

which is integrated with an IMEX scheme:

``imex-be``
    backward Euler for ``(lam - lap)``, exact factor ``exp(-delta dt)`` for the
    ``v~`` decay, everything else explicit with noise at the left end point.
``imex-cn``
    the IMEX trapezoidal (Crank-Nicolson / Heun) pair: two stages, both using
    the same ``I + dt/2 (lam - lap)`` factorization, second order in ``dt``.
    The second stage uses the noise at the right end point of the step.

Internally states are arrays of shape ``(size, B)`` so that ensemble members
sharing a path advance together through one factorized solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import ModelSpec, Nonlinearity
from .noise import WienerPath, ou_evaluate, refine, theta_shift
from .spatial import Field, GridMismatchError, gradient_energy_values, norm_lp

SCHEMES = ("imex-be", "imex-cn")
_RATIO_TOL = 1e-9


class DivergenceError(RuntimeError):
    """Non-finite state after a step; usually ``dt`` is too large for the explicit cubic."""

    def __init__(self, t: float, message: str | None = None):
        self.t = t
        super().__init__(message or f"solution became non-finite at t={t:.6g}; reduce dt")


@dataclass(frozen=True)
class SolveConfig:
    dt: float
    scheme: str = "imex-be"
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError("record_every must be an integer >= 1")


@dataclass(frozen=True, eq=False)
class StatePair:
    """Shifted state ``(u~, v~)`` at path time ``t``.

    ``y1``/``y2`` are the OU values at ``t`` so that the physical state can be
    re-assembled without the path.  ``origin`` is the path shift the run was
    started from (``-t`` for a pullback of duration ``t``).
    """

    u_tilde: Field
    v_tilde: Field
    t: float = 0.0
    seed: int | None = None
    origin: float = 0.0
    y1: float = 0.0
    y2: float = 0.0

    def __post_init__(self):
        if self.u_tilde.grid != self.v_tilde.grid:
            raise GridMismatchError("u~ and v~ must share a grid")

    @property
    def provenance(self) -> tuple[int | None, float]:
        return (self.seed, self.origin)

    @property
    def grid(self):
        return self.u_tilde.grid


@dataclass(frozen=True, eq=False)
class SplitState:
    v1: Field
    v2: Field
    t: float


def noise_fields(spec: ModelSpec, y1: float, y2: float) -> tuple[Field, Field]:
    return spec.phi1 * y1, spec.phi2 * y2


def assemble_uv(state: StatePair, z1: Field, z2: Field) -> tuple[Field, Field]:
    """``u = u~ + z1``, ``v = v~ + z2``."""
    return state.u_tilde + z1, state.v_tilde + z2


def check_alignment(dt: float, dt_path: float) -> int:
    """Return the signed power-of-two ratio exponent between ``dt`` and ``dt_path``.

    Raises ``ValueError`` unless one divides the other by a power of two.
    """
    r = dt / dt_path
    e = round(math.log2(r))
    if abs(r - 2.0**e) > _RATIO_TOL * max(r, 1.0):
        raise ValueError(f"dt={dt} and dt_path={dt_path} must differ by a power of two")
    return e


class _Stepper:
    """Pre-factorized IMEX step for one (model, nonlinearity, dt, scheme)."""

    def __init__(self, spec: ModelSpec, nl: Nonlinearity, cfg: SolveConfig):
        grid = spec.grid
        self.spec = spec
        self.cfg = cfg
        self.f = nl.bind(grid)
        dt = cfg.dt
        lap = grid.laplacian_matrix
        eye = sp.identity(grid.size, format="csc")
        theta = 1.0 if cfg.scheme == "imex-be" else 0.5
        self.theta = theta
        self.lu = splu((eye * (1.0 + theta * dt * spec.lam) - theta * dt * lap).tocsc())
        self.lap = lap
        self.g = spec.g.values[:, None]
        self.h = spec.h.values[:, None]
        self.phi1 = spec.phi1.values[:, None]
        self.phi2 = spec.phi2.values[:, None]
        self.lap_phi1 = (lap @ spec.phi1.values)[:, None]
        self.decay = math.exp(-spec.delta * dt)
        self.gain = -math.expm1(-spec.delta * dt) / spec.delta

    def _eu(self, U, V, y1, y2):
        s = self.spec
        return (-s.alpha * V + self.f(U + y1 * self.phi1) + self.g
                + y1 * self.lap_phi1 - (s.alpha * y2) * self.phi2)

    def _ev(self, U, y1):
        s = self.spec
        return s.beta * U + self.h + (s.beta * y1) * self.phi1

    def split_source(self, U, y1):
        return self._ev(U, y1)

    def __call__(self, U, V, y1, y2, y1n, y2n):
        s, dt = self.spec, self.cfg.dt
        if self.theta == 1.0:
            Un = self.lu.solve(U + dt * self._eu(U, V, y1, y2))
            Vn = self.decay * V + self.gain * self._ev(U, y1)
            return Un, Vn
        # linear parts: A_u = -(lam - lap), A_v = -delta
        Au = -s.lam * U + self.lap @ U
        Eu0 = self._eu(U, V, y1, y2)
        Ev0 = self._ev(U, y1)
        cv = 1.0 / (1.0 + 0.5 * dt * s.delta)
        Yu = self.lu.solve(U + dt * Eu0 + 0.5 * dt * Au)
        Yv = cv * (V + dt * Ev0 - 0.5 * dt * s.delta * V)
        Eu1 = self._eu(Yu, Yv, y1n, y2n)
        Ev1 = self._ev(Yu, y1n)
        Un = self.lu.solve(U + 0.5 * dt * (Eu0 + Eu1) + 0.5 * dt * Au)
        Vn = cv * (V + 0.5 * dt * (Ev0 + Ev1) - 0.5 * dt * s.delta * V)
        return Un, Vn


def _ou_schedule(path: WienerPath | None, spec: ModelSpec, dt: float, t0: float,
                 n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """OU values at ``t0 + k dt`` for ``k = 0..n_steps``."""
    if path is None:
        z = np.zeros(n_steps + 1)
        return z, z
    e = check_alignment(dt, path.dt_path)
    p = refine(path, 2 ** (-e)) if e < 0 else path
    times = t0 + dt * np.arange(n_steps + 1)
    return ou_evaluate(p, spec.lam, 1, times), ou_evaluate(p, spec.delta, 2, times)


def _n_steps(duration: float, dt: float) -> int:
    n = duration / dt
    nr = round(n)
    if abs(n - nr) > _RATIO_TOL * max(1.0, n):
        raise ValueError(f"duration {duration} is not a multiple of dt={dt}")
    if nr < 0:
        raise ValueError("duration must be nonnegative")
    return int(nr)


@dataclass
class _RunResult:
    U: np.ndarray
    V: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    V2: np.ndarray | None = None
    U_history: list | None = None


def _march(spec: ModelSpec, nl: Nonlinearity, cfg: SolveConfig, path: WienerPath | None,
           U0: np.ndarray, V0: np.ndarray, t0: float, duration: float,
           record: bool = True, track_split: bool = False,
           keep_u_history: bool = False) -> _RunResult:
    """Advance a batch of shifted states (columns of ``U0``/``V0``) over ``duration``."""
    n = _n_steps(duration, cfg.dt)
    y1s, y2s = _ou_schedule(path, spec, cfg.dt, t0, n)
    stepper = _Stepper(spec, nl, cfg)
    U = np.array(U0, dtype=float, copy=True)
    V = np.array(V0, dtype=float, copy=True)
    V2 = np.zeros_like(V) if track_split else None
    res = _RunResult(U, V, y1s, y2s, V2=V2)
    hist = [U.copy()] if keep_u_history else None
    if record:
        res.times.append(t0)
        res.records.append((U.copy(), V.copy(), None if V2 is None else V2.copy()))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            if V2 is not None:
                V2 = stepper.decay * V2 + stepper.gain * stepper.split_source(U, y1s[k])
            U, V = stepper(U, V, y1s[k], y2s[k], y1s[k + 1], y2s[k + 1])
            if not (np.isfinite(U).all() and np.isfinite(V).all()):
                raise DivergenceError(t0 + (k + 1) * cfg.dt)
            if hist is not None:
                hist.append(U.copy())
            if record and ((k + 1) % cfg.record_every == 0 or k + 1 == n):
                res.times.append(t0 + (k + 1) * cfg.dt)
                res.records.append((U.copy(), V.copy(), None if V2 is None else V2.copy()))
    res.U, res.V, res.V2, res.U_history = U, V, V2, hist
    return res


def _col(f: Field) -> np.ndarray:
    return f.values[:, None]


def step(state: StatePair, spec: ModelSpec, nl: Nonlinearity, z1: Field, z2: Field,
         cfg: SolveConfig, z1_next: Field | None = None,
         z2_next: Field | None = None) -> StatePair:
    """One IMEX step from ``state`` with noise fields ``z1``, ``z2`` at ``state.t``.

    The noise fields must be multiples of ``spec.phi1`` / ``spec.phi2``.  For
    ``imex-cn`` the end-of-step fields default to the start-of-step ones.
    """
    y1 = _coefficient(z1, spec.phi1)
    y2 = _coefficient(z2, spec.phi2)
    y1n = y1 if z1_next is None else _coefficient(z1_next, spec.phi1)
    y2n = y2 if z2_next is None else _coefficient(z2_next, spec.phi2)
    stepper = _Stepper(spec, nl, cfg)
    with np.errstate(over="ignore", invalid="ignore"):
        U, V = stepper(_col(state.u_tilde), _col(state.v_tilde), y1, y2, y1n, y2n)
    t = state.t + cfg.dt
    if not (np.isfinite(U).all() and np.isfinite(V).all()):
        raise DivergenceError(t)
    grid = state.grid
    return StatePair(Field(grid, U[:, 0]), Field(grid, V[:, 0]), t, state.seed,
                     state.origin, y1n, y2n)


def _coefficient(z: Field, phi: Field) -> float:
    denom = float(np.dot(phi.values, phi.values))
    if denom == 0.0:
        if np.any(z.values != 0):
            raise ValueError("nonzero noise field with a zero noise shape")
        return 0.0
    y = float(np.dot(z.values, phi.values)) / denom
    if not np.allclose(z.values, y * phi.values, rtol=1e-12, atol=1e-14):
        raise ValueError("noise field is not a multiple of its shape")
    return y


def _states_from(res: _RunResult, grid, cfg: SolveConfig, path: WienerPath | None,
                 t0: float, col: int = 0) -> list[StatePair]:
    seed = None if path is None else path.seed
    origin = 0.0 if path is None else path.shift
    out = []
    for t, (U, V, _) in zip(res.times, res.records):
        k = int(round((t - t0) / cfg.dt))
        out.append(StatePair(Field(grid, U[:, col]), Field(grid, V[:, col]), t, seed, origin,
                             float(res.y1[k]), float(res.y2[k])))
    return out


def solve_forward(initial: StatePair, path: WienerPath | None, spec: ModelSpec,
                  nl: Nonlinearity, cfg: SolveConfig, t_end: float) -> list[StatePair]:
    """Integrate from ``initial.t`` to path time ``t_end``.

    Returns the states every ``cfg.record_every`` steps plus the final one.
    ``path=None`` means the zero noise realization.
    """
    duration = t_end - initial.t
    if abs(duration) <= _RATIO_TOL * max(1.0, abs(t_end)):
        return [initial]
    res = _march(spec, nl, cfg, path, _col(initial.u_tilde), _col(initial.v_tilde),
                 initial.t, duration)
    return _states_from(res, spec.grid, cfg, path, initial.t)


def _y_at(path: WienerPath | None, spec: ModelSpec, t: float, dt: float) -> tuple[float, float]:
    y1, y2 = _ou_schedule(path, spec, dt, t, 0)
    return float(y1[0]), float(y2[0])


def phi_batch(t: float, path: WienerPath | None, U0: np.ndarray, V0: np.ndarray,
              spec: ModelSpec, nl: Nonlinearity, cfg: SolveConfig,
              track_split: bool = False) -> tuple[np.ndarray, np.ndarray, _RunResult]:
    """Cocycle applied to a batch of physical states (columns)."""
    y1, y2 = _y_at(path, spec, 0.0, cfg.dt)
    Ut = U0 - y1 * _col(spec.phi1)
    Vt = V0 - y2 * _col(spec.phi2)
    res = _march(spec, nl, cfg, path, Ut, Vt, 0.0, t, record=False, track_split=track_split)
    U = res.U + res.y1[-1] * _col(spec.phi1)
    V = res.V + res.y2[-1] * _col(spec.phi2)
    return U, V, res


def phi(t: float, path: WienerPath | None, u0: Field, v0: Field, spec: ModelSpec,
        nl: Nonlinearity, cfg: SolveConfig) -> tuple[Field, Field]:
    """``Phi(t, omega, (u0, v0))``."""
    if t == 0:
        return u0, v0
    U, V, _ = phi_batch(t, path, _col(u0), _col(v0), spec, nl, cfg)
    return Field(u0.grid, U[:, 0]), Field(u0.grid, V[:, 0])


def pullback_path(path: WienerPath | None, t: float) -> WienerPath | None:
    return None if path is None else theta_shift(path, -t)


def phi_pullback(t: float, path: WienerPath | None, u0: Field, v0: Field, spec: ModelSpec,
                 nl: Nonlinearity, cfg: SolveConfig) -> tuple[Field, Field]:
    """``Phi(t, theta_{-t} omega, (u0, v0))``: the present-time state of a pullback run."""
    if t == 0:
        return u0, v0
    return phi(t, pullback_path(path, t), u0, v0, spec, nl, cfg)


def solve_split(v_tilde_0: Field, u_trajectory, path: WienerPath | None, spec: ModelSpec,
                cfg: SolveConfig, t_end: float, t0: float = 0.0,
                record_every: int | None = None) -> list[SplitState]:
    """Split ``v~ = v1 + v2``: ``v1`` decays in closed form, ``v2`` starts at zero.

    ``u_trajectory`` holds ``u~`` (Fields or arrays) at every step from ``t0``.
    ``v2`` uses the exponential integrator with left-point sources.
    """
    n = _n_steps(t_end - t0, cfg.dt)
    if len(u_trajectory) < n + 1 and n > 0:
        raise ValueError(f"u trajectory has {len(u_trajectory)} states, need {n + 1}")
    every = record_every or cfg.record_every
    grid = v_tilde_0.grid
    y1s, _ = _ou_schedule(path, spec, cfg.dt, t0, n)
    decay = math.exp(-spec.delta * cfg.dt)
    gain = -math.expm1(-spec.delta * cfg.dt) / spec.delta
    h = spec.h.values
    phi1 = spec.phi1.values
    v2 = np.zeros(grid.size)
    out = [SplitState(v_tilde_0, Field(grid, v2), t0)]
    for k in range(n):
        u = u_trajectory[k]
        u = u.values if isinstance(u, Field) else np.asarray(u).reshape(-1)
        v2 = decay * v2 + gain * (spec.beta * u + h + (spec.beta * y1s[k]) * phi1)
        if (k + 1) % every == 0 or k + 1 == n:
            t = t0 + (k + 1) * cfg.dt
            v1 = v_tilde_0.values * math.exp(-spec.delta * (t - t0))
            out.append(SplitState(Field(grid, v1), Field(grid, v2), t))
    return out


def weighted_energy(spec: ModelSpec, u: Field | np.ndarray, v: Field | np.ndarray) -> float:
    """``beta ||u||^2 + alpha ||v||^2``."""
    uv = u.values if isinstance(u, Field) else u
    vv = v.values if isinstance(v, Field) else v
    dx = spec.grid.cell_volume
    return dx * (spec.beta * float(np.dot(uv, uv)) + spec.alpha * float(np.dot(vv, vv)))


TRAJECTORY_COLUMNS = ("t", "energy", "norm_u_tilde", "norm_v_tilde", "grad_u_tilde",
                      "lp_u")


def trajectory_rows(states: list[StatePair], spec: ModelSpec,
                    tail_radii=()) -> list[dict]:
    """Diagnostic time series of a trajectory (one dict per recorded state)."""
    from .spatial import norm_l2, tail_mass

    rows = []
    for st in states:
        z1, z2 = noise_fields(spec, st.y1, st.y2)
        u, v = assemble_uv(st, z1, z2)
        row = {
            "t": st.t,
            "energy": weighted_energy(spec, st.u_tilde, st.v_tilde),
            "norm_u_tilde": norm_l2(st.u_tilde),
            "norm_v_tilde": norm_l2(st.v_tilde),
            "grad_u_tilde": math.sqrt(gradient_energy_values(st.grid, st.u_tilde.values)),
            "lp_u": norm_lp(u, spec.p) ** spec.p,
        }
        for k in tail_radii:
            row[f"tail_u_{k:g}"] = tail_mass(u, k)
            row[f"tail_v_{k:g}"] = tail_mass(v, k)
        rows.append(row)
    return rows


def trajectory_csv_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = [",".join(cols)]
    lines.extend(",".join(repr(float(r[c])) for c in cols) for r in rows)
    return "\n".join(lines) + "\n"


def write_trajectory_csv(rows: list[dict], path) -> None:
    from pathlib import Path

    Path(path).write_text(trajectory_csv_text(rows))
