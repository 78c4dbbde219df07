"""Periodic uniform grid, grid functions, and discrete spatial calculus.

The computational domain is the square (0, L)^2 sampled at M x M nodes
x_i = i*h, y_j = j*h with h = L/M, everything L-periodic in both
directions.  Three difference families coexist:

* centered differences D_x v = (v[i+1,j] - v[i-1,j]) / (2h) build the
  discrete gradient ``gradient`` and divergence ``divergence``;
* the five-point stencil builds ``laplacian`` (and ``bilaplacian`` as its
  composition);
* forward differences d_x v = (v[i,j] - v[i-1,j]) / h build the H1
  seminorm only.

Inner products carry the cell weight h^2.  All reductions go through
``numpy`` pairwise summation, so repeated runs on identical inputs give
bit-identical values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "Field",
    "VecField",
    "EmbeddingReport",
    "laplacian",
    "bilaplacian",
    "gradient",
    "divergence",
    "inner",
    "norm_l2",
    "norm_lq",
    "vec_norm_l2",
    "vec_norm_lq",
    "h1_seminorm",
    "norm_max",
    "check_embedding",
    "write_snapshot",
    "read_snapshot",
]

SNAPSHOT_MAGIC = "MBE1"


@dataclass(frozen=True)
class GridSpec:
    """Square periodic grid: M nodes per direction on (0, L)^2, spacing h = L/M."""

    L: float
    M: int

    def __post_init__(self):
        if self.L <= 0.0:
            raise ValueError(f"domain length must be positive, got L={self.L}")
        if self.M < 4:
            raise ValueError(f"need at least 4 nodes per direction, got M={self.M}")
        # h*M must reproduce L to a rounding unit
        assert abs(self.h * self.M - self.L) <= 4.0 * np.finfo(float).eps * self.L

    @property
    def h(self) -> float:
        return self.L / self.M

    def nodes(self) -> np.ndarray:
        """1D node coordinates i*h, i = 0..M-1."""
        return self.h * np.arange(self.M)

    def meshgrid(self):
        """(X, Y) coordinate arrays, axis 0 = x index, axis 1 = y index."""
        x = self.nodes()
        return np.meshgrid(x, x, indexing="ij")


class Field:
    """Real grid function on a :class:`GridSpec`, stored row-major (i, j) -> i*M + j.

    Index arithmetic wraps modulo M in both directions; the wrapped array is
    held by reference (no defensive copy).  All entries must be finite.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.M, grid.M):
            raise ValueError(
                f"field shape {values.shape} does not match grid {grid.M}x{grid.M}"
            )
        if not np.isfinite(values).all():
            raise ValueError("field contains non-finite entries")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, np.zeros((grid.M, grid.M)))

    @classmethod
    def sample(cls, grid: GridSpec, fn) -> "Field":
        """Sample ``fn(X, Y)`` at the grid nodes."""
        X, Y = grid.meshgrid()
        return cls(grid, np.asarray(fn(X, Y), dtype=float))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def __repr__(self):
        return f"Field(M={self.grid.M}, L={self.grid.L:g})"


class VecField:
    """Pair of grid functions forming a discrete vector field (x, y components)."""

    __slots__ = ("x", "y")

    def __init__(self, x: Field, y: Field):
        if x.grid != y.grid:
            raise ValueError("vector field components live on different grids")
        self.x = x
        self.y = y

    @property
    def grid(self) -> GridSpec:
        return self.x.grid


def _require_same_grid(a: Field, b: Field):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


# ---------------------------------------------------------------------------
# Array-level kernels.  The solver hot loop uses these directly; the public
# Field operators below are thin wrappers.

def lap_array(a: np.ndarray, h: float) -> np.ndarray:
    """Five-point periodic Laplacian."""
    return (
        np.roll(a, -1, axis=0)
        + np.roll(a, 1, axis=0)
        + np.roll(a, -1, axis=1)
        + np.roll(a, 1, axis=1)
        - 4.0 * a
    ) / (h * h)


def gradx_array(a: np.ndarray, h: float) -> np.ndarray:
    """Centered x-difference."""
    return (np.roll(a, -1, axis=0) - np.roll(a, 1, axis=0)) / (2.0 * h)


def grady_array(a: np.ndarray, h: float) -> np.ndarray:
    """Centered y-difference."""
    return (np.roll(a, -1, axis=1) - np.roll(a, 1, axis=1)) / (2.0 * h)


def div_array(wx: np.ndarray, wy: np.ndarray, h: float) -> np.ndarray:
    """Centered divergence, the negative adjoint of the centered gradient."""
    return gradx_array(wx, h) + grady_array(wy, h)


def l2_array(a: np.ndarray, h: float) -> float:
    return math.sqrt(h * h * float(np.sum(a * a)))


# ---------------------------------------------------------------------------
# Field operators.

def laplacian(v: Field) -> Field:
    """Five-point discrete Laplacian with periodic wrap."""
    return Field(v.grid, lap_array(v.values, v.grid.h))


def bilaplacian(v: Field) -> Field:
    """Discrete biharmonic operator, the exact composition laplacian(laplacian(v))."""
    h = v.grid.h
    return Field(v.grid, lap_array(lap_array(v.values, h), h))


def gradient(v: Field) -> VecField:
    """Centered discrete gradient (D_x v, D_y v)."""
    h = v.grid.h
    return VecField(
        Field(v.grid, gradx_array(v.values, h)),
        Field(v.grid, grady_array(v.values, h)),
    )


def divergence(w: VecField) -> Field:
    """Centered divergence D_x w_x + D_y w_y.

    Chosen so the summation-by-parts identity
    ``inner(divergence(w), v) == -h^2 sum(w . gradient(v))`` holds to
    rounding for every v.
    """
    h = w.grid.h
    return Field(w.grid, div_array(w.x.values, w.y.values, h))


def inner(v: Field, w: Field) -> float:
    """Discrete L2 inner product h^2 sum(v*w)."""
    _require_same_grid(v, w)
    h = v.grid.h
    return h * h * float(np.sum(v.values * w.values))


def norm_l2(v: Field) -> float:
    return l2_array(v.values, v.grid.h)


_SUPPORTED_Q = (2, 3, 4, 6)


def norm_lq(v: Field, q: int) -> float:
    """Discrete l^q norm, q restricted to 2, 3, 4, 6."""
    if q not in _SUPPORTED_Q:
        raise ValueError(f"q must be one of {_SUPPORTED_Q}, got {q}")
    h = v.grid.h
    if q == 2:
        return norm_l2(v)
    a = np.abs(v.values) if q == 3 else v.values
    return float(h * h * np.sum(a ** q)) ** (1.0 / q)


def vec_norm_l2(w: VecField) -> float:
    """L2 norm of the pointwise vector magnitude."""
    h = w.grid.h
    return math.sqrt(h * h * float(np.sum(w.x.values**2 + w.y.values**2)))


def vec_norm_lq(w: VecField, q: int) -> float:
    """l^q norm of the pointwise vector magnitude |w| = sqrt(w_x^2 + w_y^2)."""
    if q not in _SUPPORTED_Q:
        raise ValueError(f"q must be one of {_SUPPORTED_Q}, got {q}")
    h = w.grid.h
    mag_sq = w.x.values**2 + w.y.values**2
    return float(h * h * np.sum(mag_sq ** (q / 2.0))) ** (1.0 / q)


def h1_seminorm(v: Field) -> float:
    """H1 seminorm from forward differences (distinct from the centered gradient)."""
    h = v.grid.h
    dx = (v.values - np.roll(v.values, 1, axis=0)) / h
    dy = (v.values - np.roll(v.values, 1, axis=1)) / h
    return math.sqrt(h * h * float(np.sum(dx * dx) + np.sum(dy * dy)))


def norm_max(v: Field) -> float:
    return float(np.max(np.abs(v.values)))


@dataclass(frozen=True)
class EmbeddingReport:
    """Two sides of ||grad v||^2 <= ||lap v|| * ||v|| and their slack."""

    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def ok(self) -> bool:
        return self.slack >= -1e-12 * max(1.0, self.rhs)


def check_embedding(v: Field) -> EmbeddingReport:
    """Evaluate the discrete interpolation bound ||grad v||^2 <= ||lap v|| ||v||."""
    lhs = vec_norm_l2(gradient(v)) ** 2
    rhs = norm_l2(laplacian(v)) * norm_l2(v)
    return EmbeddingReport(lhs=lhs, rhs=rhs)


# ---------------------------------------------------------------------------
# Snapshot file format: one ASCII header line "MBE1 <M> <L> <t>", then
# M*M little-endian float64 values in row-major order.

def write_snapshot(field: Field, t: float, path) -> None:
    header = f"{SNAPSHOT_MAGIC} {field.grid.M} {field.grid.L!r} {float(t)!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[Field, float]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 4 or header[0] != SNAPSHOT_MAGIC:
            raise ValueError(f"not a {SNAPSHOT_MAGIC} snapshot: {path}")
        M = int(header[1])
        L = float(header[2])
        t = float(header[3])
        raw = fh.read(8 * M * M)
    values = np.frombuffer(raw, dtype="<f8").reshape(M, M).astype(float)
    return Field(GridSpec(L=L, M=M), values), t
