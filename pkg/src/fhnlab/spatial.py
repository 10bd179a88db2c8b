"""Finite-difference grids, fields, norms and the tail cut-off.

Grids are cell-centred: point ``i`` along an axis sits at
``x_i = -L + (i + 1/2) h`` with ``h = 2L/n``.  With the ``dirichlet``
boundary the ghost value outside each wall is the negated boundary value,
so the field vanishes exactly on ``|x| = L`` and ``sin(pi x / L)`` is an
exact discrete eigenvector of the Laplacian.  The ``periodic`` boundary
wraps the stencil around.

Gradient energy uses forward differences on cell faces; the two wall faces
of a dirichlet axis are half-cells and carry half weight.  With that
convention ``(-lap f, f) == ||grad f||^2`` holds to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

BOUNDARIES = ("dirichlet", "periodic")


class GridMismatchError(ValueError):
    """Two fields live on different grids."""


class NonFiniteFieldError(ValueError):
    """A field contains NaN or Inf."""


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on ``[-L, L]^dim``."""

    dim: int
    L: float
    n: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.L > 0:
            raise ValueError(f"half length L must be positive, got {self.L}")
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"points per axis must be an integer >= 3, got {self.n}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + (np.arange(self.n) + 0.5) * self.h

    @cached_property
    def coords(self) -> np.ndarray:
        """Point coordinates, shape ``(size, dim)`` in row-major order."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def radius_sq(self) -> np.ndarray:
        return np.sum(self.coords**2, axis=1)

    def coordinate(self, i: int) -> tuple[float, ...]:
        idx = np.unravel_index(i, self.shape)
        return tuple(-self.L + (k + 0.5) * self.h for k in idx)

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        d1 = _second_difference(self.n, self.boundary) / self.h**2
        if self.dim == 1:
            return d1.tocsr()
        eye = sp.identity(self.n, format="csr")
        return (sp.kron(d1, eye) + sp.kron(eye, d1)).tocsr()

    @cached_property
    def _face_difference(self) -> tuple[sp.csr_matrix, np.ndarray]:
        # 1D face-difference operator and face weights
        n = self.n
        if self.boundary == "periodic":
            D = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
            D[n - 1, 0] = 1.0
            w = np.ones(n)
        else:
            # faces: left wall, n-1 interior, right wall; ghost = -boundary value
            D = sp.lil_matrix((n + 1, n))
            D[0, 0] = 2.0
            for j in range(n - 1):
                D[j + 1, j] = -1.0
                D[j + 1, j + 1] = 1.0
            D[n, n - 1] = -2.0
            w = np.ones(n + 1)
            w[0] = w[-1] = 0.5
        return (D.tocsr() / self.h, w)

    def gradient_components(self, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Face gradients and their quadrature weights, one pair per axis."""
        D, w = self._face_difference
        arr = values.reshape(self.shape)
        out = []
        for ax in range(self.dim):
            moved = np.moveaxis(arr, ax, 0)
            g = D @ moved.reshape(self.n, -1)
            wf = np.broadcast_to(w[:, None], g.shape)
            out.append((g, wf))
        return out

    def header(self) -> str:
        return f"# dim={self.dim},L={self.L!r},n={self.n},boundary={self.boundary}"

    @classmethod
    def from_header(cls, line: str) -> "Grid":
        body = line.lstrip("#").strip()
        kv = dict(item.split("=", 1) for item in body.split(","))
        return cls(dim=int(kv["dim"]), L=float(kv["L"]), n=int(kv["n"]), boundary=kv["boundary"])


def _second_difference(n: int, boundary: str) -> sp.spmatrix:
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    if boundary == "periodic":
        D = sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
        D[0, n - 1] = 1.0
        D[n - 1, 0] = 1.0
        return D.tocsr()
    main[0] = main[-1] = -3.0
    return sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="csr")


@dataclass(frozen=True, eq=False)
class Field:
    """Real grid function; values are stored flat in row-major order."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.grid.size:
            raise ValueError(f"field has {vals.size} values, grid expects {self.grid.size}")
        if not np.all(np.isfinite(vals)):
            raise NonFiniteFieldError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "Field":
        return cls(grid, np.full(grid.size, float(c)))

    @classmethod
    def from_function(cls, grid: Grid, func) -> "Field":
        """Sample ``func(x)`` where ``x`` has shape ``(size, dim)``."""
        return cls(grid, func(grid.coords))

    def _check(self, other: "Field"):
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} vs {other.grid}")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def to_csv(self, path) -> None:
        write_field_csv(self, path)


def laplacian(f: Field) -> Field:
    return Field(f.grid, f.grid.laplacian_matrix @ f.values)


def inner_product(f: Field, g: Field) -> float:
    f._check(g)
    return float(f.grid.cell_volume * np.dot(f.values, g.values))


def norm_l2(f: Field) -> float:
    return math.sqrt(f.grid.cell_volume * float(np.dot(f.values, f.values)))


def norm_lp(f: Field, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return (f.grid.cell_volume * float(np.sum(np.abs(f.values) ** p))) ** (1.0 / p)


def gradient_energy(f: Field) -> float:
    """``||grad f||^2`` with the face convention described in the module docstring."""
    return gradient_energy_values(f.grid, f.values)


def gradient_energy_values(grid: Grid, values: np.ndarray) -> float:
    total = 0.0
    for g, w in grid.gradient_components(values):
        total += float(np.sum(w * g * g))
    return grid.cell_volume * total


def norm_h1(f: Field) -> float:
    return math.sqrt(norm_l2(f) ** 2 + gradient_energy(f))


def cutoff_rho(s):
    """Quintic smoothstep: 0 on [0, 1], 1 on [2, inf), C^2 in between.

    The derivative is bounded by 15/8.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError("cutoff argument must be nonnegative")
    t = np.clip(s_arr - 1.0, 0.0, 1.0)
    out = t**3 * (t * (6.0 * t - 15.0) + 10.0)
    return float(out) if out.ndim == 0 else out


def cutoff_rho_prime(s):
    t = np.clip(np.asarray(s, dtype=float) - 1.0, 0.0, 1.0)
    out = 30.0 * t**2 * (1.0 - t) ** 2
    return float(out) if out.ndim == 0 else out


def tail_weights(grid: Grid, k: float) -> np.ndarray:
    if not k > 0:
        raise ValueError(f"tail radius must be positive, got {k}")
    return cutoff_rho(grid.radius_sq / (k * k))


def tail_mass(f: Field, k: float) -> float:
    """Smoothly cut-off mass ``int rho(|x|^2/k^2) |f|^2 dx``."""
    return tail_mass_values(f.grid, f.values, k)


def tail_mass_values(grid: Grid, values: np.ndarray, k: float) -> float:
    return grid.cell_volume * float(np.dot(tail_weights(grid, k), values * values))


def field_csv_text(f: Field) -> str:
    """Grid header line followed by one value per line (``repr`` round-trips exactly)."""
    lines = [f.grid.header()]
    lines.extend(repr(float(x)) for x in f.values)
    return "\n".join(lines) + "\n"


def write_field_csv(f: Field, path) -> None:
    Path(path).write_text(field_csv_text(f))


def read_field_csv(path) -> Field:
    text = Path(path).read_text().splitlines()
    grid = Grid.from_header(text[0])
    vals = np.array([float(x) for x in text[1:] if x.strip()])
    return Field(grid, vals)
