"""Thin-film growth physics: nonlinear slope force, energies, and test problems.

The height field u on the periodic square evolves by

    u_t + delta * lap^2 u - div f(grad u) = 0,
    f(v) = (|v|^2 - 1) v,

whose dynamics steers |grad u| toward 1 (slope selection); delta > 0 sets
the width of the rounded facet corners.  The discrete free energy

    E = (delta/2) ||lap_h u||^2 + (1/4) || |grad_h u|^2 - 1 ||^2

is non-increasing along the implicit two-step scheme once augmented by a
small step-ratio term (the modified energy), which is what the solver
records per level.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import grid as g
from .grid import Field, GridSpec, VecField
from .timekernels import TimeMesh

__all__ = [
    "ModelParams",
    "EnergyRecord",
    "Observables",
    "force",
    "discrete_energy",
    "modified_energy",
    "roughness",
    "observables",
    "initial_data",
    "manufactured",
    "manufactured_forcing",
    "forcing_provider",
    "coarsening_initial",
    "solution_bound",
    "TRACE_COLUMNS",
    "write_trace_csv",
]

FORCING_MODES = ("none", "discrete", "analytic")


@dataclass(frozen=True)
class ModelParams:
    """Corner-width coefficient delta and the grid it acts on."""

    delta: float
    grid: GridSpec

    def __post_init__(self):
        if self.delta <= 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")


def force(w: VecField) -> VecField:
    """Pointwise slope force f(w) = (|w|^2 - 1) w.  Odd, and zero on |w| = 1."""
    coef = w.x.values**2 + w.y.values**2 - 1.0
    return VecField(
        Field(w.grid, coef * w.x.values),
        Field(w.grid, coef * w.y.values),
    )


def _force_arrays(wx: np.ndarray, wy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    coef = wx * wx + wy * wy - 1.0
    return coef * wx, coef * wy


def discrete_energy(u: Field, params: ModelParams) -> float:
    """E = (delta/2)||lap u||^2 + (1/4) h^2 sum (|grad u|^2 - 1)^2."""
    h = u.grid.h
    lap = g.lap_array(u.values, h)
    gx = g.gradx_array(u.values, h)
    gy = g.grady_array(u.values, h)
    well = gx * gx + gy * gy - 1.0
    return 0.5 * params.delta * h * h * float(np.sum(lap * lap)) + 0.25 * h * h * float(
        np.sum(well * well)
    )


def modified_energy(E: float, u_n: Field, u_prev: Field | None, mesh: TimeMesh, n: int) -> float:
    """Energy augmented by r_{n+1}^(3/2) ||u^n - u^{n-1}||^2 / (2(1+r_{n+1}) tau_n).

    Uses the boundary convention r_{N+1} = 0, so the final level's modified
    energy coincides with E.  At n = 0 it is E itself.
    """
    if n == 0:
        return E
    r_next = mesh.ratio(n + 1)
    if r_next == 0.0:
        return E
    dnorm = g.l2_array(u_n.values - u_prev.values, u_n.grid.h)
    return E + r_next**1.5 / (2.0 * (1.0 + r_next) * mesh.tau(n)) * dnorm**2


def roughness(u: Field) -> float:
    """Root-mean-square deviation of the height from its spatial mean."""
    dev = u.values - np.mean(u.values)
    return g.l2_array(dev, u.grid.h) / u.grid.L


@dataclass(frozen=True)
class Observables:
    """Per-level diagnostics sharing one gradient/Laplacian evaluation."""

    energy: float
    lap_l2: float
    grad_l2: float
    grad_l4: float
    roughness: float


def observables(values: np.ndarray, grid: GridSpec, delta: float) -> Observables:
    h = grid.h
    lap = g.lap_array(values, h)
    gx = g.gradx_array(values, h)
    gy = g.grady_array(values, h)
    mag_sq = gx * gx + gy * gy
    well = mag_sq - 1.0
    lap_l2 = math.sqrt(h * h * float(np.sum(lap * lap)))
    grad_l2 = math.sqrt(h * h * float(np.sum(mag_sq)))
    grad_l4 = float(h * h * np.sum(mag_sq * mag_sq)) ** 0.25
    energy = 0.5 * delta * lap_l2**2 + 0.25 * h * h * float(np.sum(well * well))
    dev = values - np.mean(values)
    return Observables(
        energy=energy,
        lap_l2=lap_l2,
        grad_l2=grad_l2,
        grad_l4=grad_l4,
        roughness=g.l2_array(dev, h) / grid.L,
    )


def initial_data(
    phi0: Field,
    params: ModelParams,
    tau1: float,
    forcing_at_0: Field | None = None,
) -> Field:
    """Modified starting value u^0 = phi0 - (tau_1/2) phi1.

    phi1 is the right-hand side of the evolution law applied to phi0 with
    the *discrete* spatial operators, phi1 = div f(grad phi0) - delta
    lap^2 phi0, plus the forcing at t = 0 when a manufactured source is
    active.  This keeps the starting construction self-contained on the
    grid.
    """
    if tau1 <= 0.0:
        raise ValueError(f"tau1 must be positive, got {tau1}")
    h = phi0.grid.h
    a = phi0.values
    fx, fy = _force_arrays(g.gradx_array(a, h), g.grady_array(a, h))
    phi1 = g.div_array(fx, fy, h) - params.delta * g.lap_array(g.lap_array(a, h), h)
    if forcing_at_0 is not None:
        phi1 = phi1 + forcing_at_0.values
    return Field(phi0.grid, a - 0.5 * tau1 * phi1)


# ---------------------------------------------------------------------------
# Manufactured solution u(x, y, t) = cos t sin x sin y and the source terms
# that make the forced equation reproduce it.

def manufactured(t: float, grid: GridSpec) -> Field:
    X, Y = grid.meshgrid()
    return Field(grid, math.cos(t) * np.sin(X) * np.sin(Y))


def _manufactured_dt(t: float, grid: GridSpec) -> np.ndarray:
    X, Y = grid.meshgrid()
    return -math.sin(t) * np.sin(X) * np.sin(Y)


def manufactured_forcing(t: float, grid: GridSpec, params: ModelParams, mode: str) -> Field:
    """Source g making the prescribed solution exact.

    ``discrete`` assembles the spatial part with the grid operators, so
    exact samples have zero semi-discrete residual and a forced run
    measures temporal error only.  ``analytic`` uses the continuous
    closed forms and therefore carries the O(h^2) spatial error as well.
    """
    if mode == "discrete":
        h = grid.h
        u = manufactured(t, grid).values
        fx, fy = _force_arrays(g.gradx_array(u, h), g.grady_array(u, h))
        spatial = params.delta * g.lap_array(g.lap_array(u, h), h) - g.div_array(fx, fy, h)
        return Field(grid, _manufactured_dt(t, grid) + spatial)
    if mode == "analytic":
        X, Y = grid.meshgrid()
        c = math.cos(t)
        sxsy = np.sin(X) * np.sin(Y)
        grad_sq = c * c * (np.cos(X) ** 2 * np.sin(Y) ** 2 + np.sin(X) ** 2 * np.cos(Y) ** 2)
        # div f(grad u) = (|grad u|^2 - 1) lap u + grad(|grad u|^2) . grad u
        div_f = (grad_sq - 1.0) * (-2.0 * c * sxsy) + c**3 * (
            np.sin(2 * X) * np.cos(2 * Y) * np.cos(X) * np.sin(Y)
            + np.cos(2 * X) * np.sin(2 * Y) * np.sin(X) * np.cos(Y)
        )
        # lap^2 u = 4u for this separable profile
        return Field(
            grid, -math.sin(t) * sxsy + 4.0 * params.delta * c * sxsy - div_f
        )
    raise ValueError(f"unknown forcing mode {mode!r}; expected one of {FORCING_MODES}")


def forcing_provider(params: ModelParams, mode: str):
    """Callable t -> Field for the requested mode, or None for 'none'."""
    if mode == "none":
        return None
    if mode not in FORCING_MODES:
        raise ValueError(f"unknown forcing mode {mode!r}; expected one of {FORCING_MODES}")
    return lambda t: manufactured_forcing(t, params.grid, params, mode)


def coarsening_initial(grid: GridSpec) -> Field:
    """Small two-mode perturbation 0.1(sin 3x sin 2y + sin 5x sin 5y)."""
    X, Y = grid.meshgrid()
    return Field(grid, 0.1 * (np.sin(3 * X) * np.sin(2 * Y) + np.sin(5 * X) * np.sin(5 * Y)))


def solution_bound(E0: float, params: ModelParams) -> float:
    """A-priori bound C0 on ||grad u||, ||grad u||_4 and ||lap u|| along any
    dissipative trajectory starting at energy E0."""
    K1 = (4.0 * E0 + 2.0 * params.grid.L**2) / min(2.0 * params.delta, 0.25)
    return max(math.sqrt(K1), K1**0.25)


# ---------------------------------------------------------------------------
# Per-level trace records.

@dataclass(frozen=True)
class EnergyRecord:
    """One accepted level: time, step size, energies, roughness, solver work."""

    step: int
    t: float
    tau: float
    E: float
    E_mod: float
    roughness: float
    picard_iters: int


TRACE_COLUMNS = ("step", "t", "tau", "E", "E_mod", "roughness", "picard_iters")


def write_trace_csv(records, path, extra_columns=(), extra_rows=None) -> None:
    """Write trace records as CSV; numbers use shortest round-trip repr.

    ``extra_columns``/``extra_rows`` append per-record columns (the adaptive
    driver adds accepted/rejections).
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(TRACE_COLUMNS) + list(extra_columns))
        for i, rec in enumerate(records):
            row = [
                rec.step,
                repr(rec.t),
                repr(rec.tau),
                repr(rec.E),
                repr(rec.E_mod),
                repr(rec.roughness),
                rec.picard_iters,
            ]
            if extra_rows is not None:
                row += list(extra_rows[i])
            writer.writerow(row)
