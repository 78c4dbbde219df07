"""Numerical certification of the kernel and embedding inequalities.

Every check draws seeded random trials, records the worst slack seen
(most negative margin, with slack oriented so that violations are
negative), and passes when that slack stays above the stated tolerance.
Slack tolerances are relative to the magnitude of the compared
quantities, so the sweeps survive rounding at large sequence lengths.
The same checks back both the test suite and the ``verify`` CLI
subcommand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid as g
from .grid import GridSpec
from .model import ModelParams, coarsening_initial, initial_data
from .solver import SolverConfig, march
from .timekernels import (
    TimeMesh,
    bdf2_coeffs,
    doc_table,
    doc_table_recursion,
    positivity_rate,
    stability_constants,
)

__all__ = [
    "CheckReport",
    "random_mesh",
    "check_force_inequalities",
    "check_kernel_identities",
    "check_positive_definiteness",
    "check_doc_kernel_properties",
    "check_gradient_embedding",
    "check_energy_dissipation",
    "run_all",
]

_TINY = 1e-300


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one randomized certification sweep."""

    name: str
    trials: int
    worst_slack: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{self.name:<28} trials={self.trials:<8d} "
            f"worst_slack={self.worst_slack:+.3e}  {status}"
        )


def _report(name, trials, worst, tol, **detail) -> CheckReport:
    return CheckReport(
        name=name,
        trials=trials,
        worst_slack=float(worst),
        tolerance=tol,
        passed=bool(worst >= -tol),
        detail=detail,
    )


def random_mesh(rng: np.random.Generator, n_max: int = 200, r_max: float = 4.8) -> TimeMesh:
    """Random admissible mesh: ratios uniform in [0.1, r_max], total time 1.

    Steps are accumulated in log space so long meshes cannot overflow, then
    rescaled; rescaling leaves every ratio unchanged.
    """
    n = int(rng.integers(1, n_max + 1))
    if n == 1:
        return TimeMesh.from_steps([float(rng.uniform(0.1, 1.0))])
    ratios = rng.uniform(0.1, r_max, size=n - 1)
    taus = np.exp(np.concatenate([[0.0], np.cumsum(np.log(ratios))]))
    return TimeMesh.from_steps(taus / taus.sum())


# ---------------------------------------------------------------------------
# Pointwise force inequalities.

def check_force_inequalities(trials: int = 100_000, seed: int = 0) -> CheckReport:
    """Both pointwise vector bounds behind the energy and uniqueness proofs.

    For f(u) = (|u|^2-1)u and z = u - v:
      (u-v).f(u)      >= (|u|^4-|v|^4)/4 - (|u|^2-|v|^2)/2 - |u-v|^2/2
      z.(f(u)-f(v))   >= |v|^2 |z|^2 / 2 + (u.z)^2 / 2 - |z|^2
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(-3.0, 3.0, size=(trials, 2))
    v = rng.uniform(-3.0, 3.0, size=(trials, 2))
    z = u - v
    uu = np.sum(u * u, axis=1)
    vv = np.sum(v * v, axis=1)
    zz = np.sum(z * z, axis=1)
    uz = np.sum(u * z, axis=1)

    fu_dot_z = (uu - 1.0) * uz
    slack1 = fu_dot_z - (0.25 * (uu**2 - vv**2) - 0.5 * (uu - vv) - 0.5 * zz)

    fv = (vv - 1.0)[:, None] * v
    fu = (uu - 1.0)[:, None] * u
    lhs2 = np.sum((fu - fv) * z, axis=1)
    slack2 = lhs2 - (0.5 * vv * zz + 0.5 * uz**2 - zz)

    worst = min(slack1.min(), slack2.min())
    return _report("force-inequalities", trials, worst, 1e-12)


# ---------------------------------------------------------------------------
# Kernel identities: triangular inverse, row sums, product vs recursion.

def check_kernel_identities(
    trials: int = 1000,
    seed: int = 0,
    n_max: int = 200,
    _corrupt: bool = False,
) -> CheckReport:
    """On random admissible meshes: the shipped DOC table inverts the kernel
    array (sum theta*b = delta), row sums stay below tau_n, and the product
    form matches the recursion to 1e-12 relative."""
    rng = np.random.default_rng(seed)
    worst_ident = math.inf
    worst_rowsum = math.inf
    worst_paths = math.inf
    for _ in range(trials):
        mesh = random_mesh(rng, n_max=n_max)
        n = mesh.N
        rows = doc_table(mesh, n)
        if _corrupt:
            rows = [row.copy() for row in rows]
            rows[-1][0] *= 1.0 + 1e-6
        rows_rec = doc_table_recursion(mesh, n)
        b = np.array([bdf2_coeffs(mesh, k) for k in range(1, n + 1)])
        b0, b1 = b[:, 0], b[:, 1]
        for m in range(1, n + 1):
            row = rows[m - 1]
            diag = row[-1] * b0[m - 1]
            worst_ident = min(worst_ident, 1e-12 - abs(diag - 1.0))
            if m > 1:
                lead = row[:-1] * b0[: m - 1]
                off = lead + row[1:] * b1[1:m]
                rel = np.abs(off) / np.maximum(np.abs(lead), _TINY)
                worst_ident = min(worst_ident, 1e-12 - rel.max())
            tau_m = mesh.tau(m)
            worst_rowsum = min(worst_rowsum, (tau_m + 1e-12 - row.sum()) / tau_m)
            rel_paths = np.max(np.abs(row - rows_rec[m - 1]) / rows_rec[m - 1])
            worst_paths = min(worst_paths, 1e-12 - rel_paths)
    worst = min(worst_ident, worst_rowsum, worst_paths)
    return _report(
        "kernel-identities", trials, worst, 0.0,
        orthogonality=worst_ident, row_sum=worst_rowsum, product_vs_recursion=worst_paths,
    )


# ---------------------------------------------------------------------------
# Kernel quadratic-form positivity.

def check_positive_definiteness(
    mesh: TimeMesh | None = None, trials: int = 1000, seed: int = 0
) -> CheckReport:
    """Summed quadratic-form bound for the two-step kernel weights:

        sum_k w_k sum_j b_{k-j}(k) w_j >= (1/2) sum_k rate(r_k, r_{k+1}) w_k^2 / tau_k

    with the boundary conventions r_1 = r_{n+1} = 0.  A fresh random mesh is
    drawn per trial when none is supplied."""
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(trials):
        m = mesh if mesh is not None else random_mesh(rng, n_max=40)
        n = m.N
        w = rng.standard_normal(n)
        b = np.array([bdf2_coeffs(m, k) for k in range(1, n + 1)])
        lhs = float(np.sum(w * b[:, 0] * w))
        if n > 1:
            lhs += float(np.sum(w[1:] * b[1:, 1] * w[:-1]))
        rates = np.array([positivity_rate(m.ratio(k), m.ratio(k + 1)) for k in range(1, n + 1)])
        taus = m.taus
        rhs = 0.5 * float(np.sum(rates * w * w / taus))
        scale = max(abs(lhs), abs(rhs), 1.0)
        worst = min(worst, (lhs - rhs) / scale)
    return _report("kernel-positive-definite", trials, worst, 1e-10)


# ---------------------------------------------------------------------------
# DOC table properties: positivity, row sums, quadratic-form sandwich,
# and the cross-term bound.

def _doc_bilinear(rows, A: np.ndarray, B: np.ndarray) -> float:
    """sum_k sum_{j<=k} theta_{k-j}(k) <A^j, B^k> for vector sequences."""
    total = 0.0
    for k in range(1, len(rows) + 1):
        total += float(np.dot(rows[k - 1], A[:k] @ B[k - 1]))
    return total


def check_doc_kernel_properties(
    mesh: TimeMesh | None = None,
    trials: int = 1000,
    seed: int = 0,
    epsilons=(0.1, 1.0, 10.0),
) -> CheckReport:
    """DOC kernel battery on random admissible meshes with n <= 100:

    (i) the symmetrised DOC matrix is positive (random quadratic forms),
    (ii) row sums stay below tau_n,
    (iii) the two-sided quadratic-form sandwich
          m1/(2 m2) sum tau_k |v^k|^2 <= sum theta <v^j, v^k> <= m3/2 sum tau_k |v^k|^2,
    (iv) the cross bound sum theta <v^j, w^k> <= eps sum tau |v|^2
         + m3/(4 m1 eps) sum tau |w|^2 for each configured eps.
    """
    rng = np.random.default_rng(seed)
    worst_pos = math.inf
    worst_rowsum = math.inf
    worst_sandwich = math.inf
    worst_cross = math.inf
    for _ in range(trials):
        m = mesh if mesh is not None else random_mesh(rng, n_max=100)
        n = m.N
        rows = doc_table(m, n)
        taus = m.taus
        consts = stability_constants(max(m.max_ratio, 1.0))

        w = rng.standard_normal(n)
        quad = 2.0 * sum(
            float(np.dot(rows[k - 1], w[:k]) * w[k - 1]) for k in range(1, n + 1)
        )
        worst_pos = min(worst_pos, quad / float(np.dot(w, w)))

        for k in range(1, n + 1):
            worst_rowsum = min(worst_rowsum, (m.tau(k) + 1e-12 - rows[k - 1].sum()) / m.tau(k))

        V = rng.standard_normal((n, 2))
        W = rng.standard_normal((n, 2))
        S = _doc_bilinear(rows, V, V)
        weight_v = float(np.sum(taus * np.sum(V * V, axis=1)))
        weight_w = float(np.sum(taus * np.sum(W * W, axis=1)))
        lower = 0.5 * consts.m1 / consts.m2 * weight_v
        upper = 0.5 * consts.m3 * weight_v
        scale = max(abs(S), upper, 1.0)
        worst_sandwich = min(worst_sandwich, (S - lower) / scale, (upper - S) / scale)

        T = _doc_bilinear(rows, V, W)
        for eps in epsilons:
            rhs = eps * weight_v + consts.m3 / (4.0 * consts.m1 * eps) * weight_w
            scale = max(abs(T), abs(rhs), 1.0)
            worst_cross = min(worst_cross, (rhs - T) / scale)
    worst = min(worst_pos, worst_rowsum, worst_sandwich, worst_cross)
    return _report(
        "doc-kernel-properties", trials, worst, 1e-10,
        positivity=worst_pos, row_sum=worst_rowsum,
        sandwich=worst_sandwich, cross_bound=worst_cross,
    )


# ---------------------------------------------------------------------------
# Gradient embedding chain with the explicit constant 40.

def check_gradient_embedding(
    trials: int = 1000, seed: int = 0, M: int = 32, L: float = 2.0 * math.pi
) -> CheckReport:
    """||grad u||_6^6 <= 40 ||grad u||_4^4 (4 ||lap u||^2 + ||grad u||^2 / L^2)
    on random fields; the analogous l4 ratio is reported without an asserted
    constant."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(L=L, M=M)
    h = grid.h
    worst = math.inf
    l4_ratio_max = 0.0
    for _ in range(trials):
        a = rng.standard_normal((M, M))
        gx = g.gradx_array(a, h)
        gy = g.grady_array(a, h)
        lap = g.lap_array(a, h)
        mag_sq = gx * gx + gy * gy
        grad2_sq = h * h * float(np.sum(mag_sq))
        grad4_4 = h * h * float(np.sum(mag_sq**2))
        grad6_6 = h * h * float(np.sum(mag_sq**3))
        lap2_sq = h * h * float(np.sum(lap * lap))
        rhs = 40.0 * grad4_4 * (4.0 * lap2_sq + grad2_sq / L**2)
        scale = max(grad6_6, rhs, 1.0)
        worst = min(worst, (rhs - grad6_6) / scale)
        denom = grad2_sq**0.25 * (2.0 * lap2_sq + grad2_sq / L**2) ** 0.25
        if denom > 0.0:
            l4_ratio_max = max(l4_ratio_max, grad4_4**0.25 / denom)
    return _report(
        "gradient-l6-embedding", trials, worst, 1e-10, l4_ratio_worst=l4_ratio_max
    )


# ---------------------------------------------------------------------------
# Energy dissipation along an unforced run.

def check_energy_dissipation(
    M: int = 64,
    T: float = 1.0,
    tau: float = 1e-3,
    delta: float = 0.1,
    L: float = 2.0 * math.pi,
) -> CheckReport:
    """Unforced run with steps inside the dissipation bound: the modified
    energy must be non-increasing (within 1e-10 per step) and the raw energy
    bounded by its starting value."""
    grid = GridSpec(L=L, M=M)
    params = ModelParams(delta=delta, grid=grid)
    mesh = TimeMesh.uniform(T, max(1, round(T / tau)))
    u0 = initial_data(coarsening_initial(grid), params, mesh.tau(1))
    result = march(u0, mesh, SolverConfig(), params)
    e_mod = np.array([rec.E_mod for rec in result.trace])
    e_raw = np.array([rec.E for rec in result.trace])
    worst_mono = float(np.min(e_mod[:-1] - e_mod[1:]))
    worst_bound = float(np.min(e_raw[0] - e_raw))
    worst = min(worst_mono, worst_bound)
    return _report(
        "energy-dissipation", mesh.N, worst, 1e-10,
        worst_monotonicity=worst_mono, worst_E0_bound=worst_bound,
        dissipation_violations=result.dissipation_violations,
    )


def run_all(
    seed: int = 0,
    trials: int | None = None,
    energy_config: dict | None = None,
    _corrupt_kernels: bool = False,
) -> list[CheckReport]:
    """Full certification battery; ``trials`` overrides every sweep size."""
    t = lambda default: default if trials is None else max(1, trials)
    reports = [
        check_force_inequalities(trials=t(100_000), seed=seed),
        check_kernel_identities(trials=t(1000), seed=seed + 1, _corrupt=_corrupt_kernels),
        check_positive_definiteness(trials=t(1000), seed=seed + 2),
        check_doc_kernel_properties(trials=t(1000), seed=seed + 3),
        check_gradient_embedding(trials=t(1000), seed=seed + 4),
        check_energy_dissipation(**(energy_config or {})),
    ]
    return reports
