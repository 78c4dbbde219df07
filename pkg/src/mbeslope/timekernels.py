"""Variable time meshes, two-step BDF convolution kernels, and their inverses.

The implicit two-step scheme advances with level-dependent weights

    b0(n) = (1+2r_n) / (tau_n (1+r_n)),   b1(n) = -r_n^2 / (tau_n (1+r_n)),

where r_n = tau_n/tau_{n-1} is the adjacent step ratio (r_1 = 0 by
convention, likewise r_{N+1} = 0 past the final level).  The first level
uses the one-step starter b0(1) = 2/tau_1.

Inverting the lower-triangular kernel array yields the discrete orthogonal
convolution (DOC) table theta, characterised by

    sum_{j=k..n} theta_{n-j}(n) * b_{j-k}(j) == delta_{nk}.

Two independent constructions are provided: the defining recursion
(`doc_table_recursion`) and a closed product form in step-scaled variables
(`doc_table`, the shipped fast path); they agree to rounding and are
cross-checked in the verification suite.  Positivity of the kernel
quadratic forms holds for step ratios below the critical value ~4.864,
with explicit eigenvalue bounds collected in :class:`StabilityConstants`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field

__all__ = [
    "RATIO_LIMIT",
    "TimeMesh",
    "KernelSet",
    "StabilityConstants",
    "bdf2_coeffs",
    "scaled_bdf2_coeffs",
    "doc_table",
    "doc_table_recursion",
    "doc_row",
    "doc_row_sum",
    "positivity_rate",
    "stability_constants",
    "solvable_step_bound",
    "dissipation_step_bound",
    "d2_apply",
    "d2_all",
]

# Largest admissible adjacent step ratio: the kernel quadratic form stays
# positive definite while 1 + 2r - r^(3/2) > 0, whose root is ~4.8645.
RATIO_LIMIT = 4.864


class TimeMesh:
    """Strictly increasing time levels t_0 = 0 < t_1 < ... < t_N.

    Accessors use one-based level indices matching the step subscripts:
    ``tau(n)`` for 1 <= n <= N and ``ratio(n)`` for 1 <= n <= N+1, with the
    boundary conventions ratio(1) = ratio(N+1) = 0.
    """

    def __init__(self, levels, _steps=None):
        t = np.asarray(levels, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("need at least two time levels")
        if t[0] != 0.0:
            raise ValueError(f"first level must be t=0, got {t[0]}")
        dt = np.diff(t)
        if not (dt > 0.0).all():
            raise ValueError("time levels must be strictly increasing")
        self._t = t
        # from_steps passes the exact steps so controller-chosen sizes are
        # preserved bit for bit instead of being re-differenced
        self._tau = dt if _steps is None else _steps

    @classmethod
    def uniform(cls, T: float, N: int) -> "TimeMesh":
        return cls(np.linspace(0.0, T, N + 1))

    @classmethod
    def graded(cls, T: float, N: int, r: float) -> "TimeMesh":
        """Levels t_k = T (k/N)^r, concentrating steps near t = 0."""
        k = np.arange(N + 1, dtype=float)
        return cls(T * (k / N) ** r)

    @classmethod
    def from_steps(cls, taus) -> "TimeMesh":
        taus = np.asarray(taus, dtype=float)
        if taus.ndim != 1 or taus.size < 1 or not (taus > 0.0).all():
            raise ValueError("need a nonempty sequence of positive steps")
        return cls(np.concatenate([[0.0], np.cumsum(taus)]), _steps=taus.copy())

    @property
    def N(self) -> int:
        return self._tau.size

    @property
    def T(self) -> float:
        return float(self._t[-1])

    @property
    def levels(self) -> np.ndarray:
        return self._t.copy()

    @property
    def taus(self) -> np.ndarray:
        return self._tau.copy()

    def t(self, n: int) -> float:
        if not 0 <= n <= self.N:
            raise IndexError(f"level {n} outside 0..{self.N}")
        return float(self._t[n])

    def tau(self, n: int) -> float:
        if not 1 <= n <= self.N:
            raise IndexError(f"step {n} outside 1..{self.N}")
        return float(self._tau[n - 1])

    def ratio(self, n: int) -> float:
        """Adjacent step ratio r_n = tau_n/tau_{n-1}; 0 at both boundaries."""
        if n == 1 or n == self.N + 1:
            return 0.0
        if not 2 <= n <= self.N:
            raise IndexError(f"ratio index {n} outside 1..{self.N + 1}")
        return float(self._tau[n - 1] / self._tau[n - 2])

    def ratios(self) -> np.ndarray:
        """All interior ratios r_2..r_N (empty when N < 2)."""
        return self._tau[1:] / self._tau[:-1]

    @property
    def max_ratio(self) -> float:
        r = self.ratios()
        return float(r.max()) if r.size else 0.0

    def admissible(self, r_s: float = RATIO_LIMIT) -> bool:
        return self.max_ratio <= r_s

    def __repr__(self):
        return f"TimeMesh(N={self.N}, T={self.T:g}, max_ratio={self.max_ratio:.3f})"


# ---------------------------------------------------------------------------
# Convolution kernels.

def bdf2_coeffs(mesh: TimeMesh, n: int) -> tuple[float, float]:
    """Per-level kernel pair (b0(n), b1(n)); b1 is reported as 0 at n = 1."""
    if not 1 <= n <= mesh.N:
        raise IndexError(f"level {n} outside 1..{mesh.N}")
    tau_n = mesh.tau(n)
    if n == 1:
        return 2.0 / tau_n, 0.0
    r = mesh.ratio(n)
    denom = tau_n * (1.0 + r)
    return (1.0 + 2.0 * r) / denom, -(r * r) / denom


def scaled_bdf2_coeffs(mesh: TimeMesh, n: int) -> tuple[float, float]:
    """Dimensionless kernels: 2 at n = 1, else ((1+2r)/(1+r), -r^(3/2)/(1+r))."""
    if not 1 <= n <= mesh.N:
        raise IndexError(f"level {n} outside 1..{mesh.N}")
    if n == 1:
        return 2.0, 0.0
    r = mesh.ratio(n)
    return (1.0 + 2.0 * r) / (1.0 + r), -(r ** 1.5) / (1.0 + r)


def _doc_scaled_row(mesh: TimeMesh, n: int) -> np.ndarray:
    """Scaled DOC row: entry j-1 holds theta~_{n-j}(n) = (1/b0~(j)) prod_{i>j} r_i^(3/2)/(1+2r_i)."""
    pref = np.empty(n)
    pref[0] = 0.5
    if n > 1:
        r = np.array([mesh.ratio(j) for j in range(2, n + 1)])
        pref[1:] = (1.0 + r) / (1.0 + 2.0 * r)
        decay = r ** 1.5 / (1.0 + 2.0 * r)
        # suffix products prod_{i=j+1..n} decay_i, built back to front
        suffix = np.ones(n)
        suffix[:-1] = np.cumprod(decay[::-1])[::-1]
    else:
        suffix = np.ones(1)
    return pref * suffix


def doc_row(mesh: TimeMesh, n: int) -> np.ndarray:
    """DOC row for level n via the scaled product form (the shipped path).

    Entry j-1 of the returned length-n array is theta_{n-j}(n), i.e. the
    weight multiplying level j; the last entry is theta_0(n) = 1/b0(n).
    """
    taus = np.array([mesh.tau(j) for j in range(1, n + 1)])
    return np.sqrt(taus[-1] * taus) * _doc_scaled_row(mesh, n)


def doc_table(mesh: TimeMesh, n: int) -> list[np.ndarray]:
    """DOC rows 1..n (product form).  All entries are strictly positive."""
    if not 1 <= n <= mesh.N:
        raise IndexError(f"level {n} outside 1..{mesh.N}")
    return [doc_row(mesh, k) for k in range(1, n + 1)]


def doc_table_recursion(mesh: TimeMesh, n: int) -> list[np.ndarray]:
    """DOC rows 1..n from the defining recursion on the raw kernels.

    Row k: theta_0(k) = 1/b0(k) and, stepping the source level j downward,
    theta_{k-j}(k) = -theta_{k-j-1}(k) * b1(j+1) / b0(j).  Used to validate
    the product form; the two agree to rounding.
    """
    if not 1 <= n <= mesh.N:
        raise IndexError(f"level {n} outside 1..{mesh.N}")
    b0 = np.empty(n)
    b1 = np.empty(n)
    for k in range(1, n + 1):
        b0[k - 1], b1[k - 1] = bdf2_coeffs(mesh, k)
    rows = []
    for k in range(1, n + 1):
        row = np.empty(k)
        row[-1] = 1.0 / b0[k - 1]
        if k > 1:
            # factor taking column j+1 to column j: -b1(j+1)/b0(j)
            f = -b1[1:k] / b0[: k - 1]
            row[:-1] = row[-1] * np.cumprod(f[::-1])[::-1]
        rows.append(row)
    return rows


def doc_row_sum(mesh: TimeMesh, n: int) -> float:
    """Sum of DOC row n; bounded above by tau_n."""
    return float(np.sum(doc_row(mesh, n)))


@dataclass(frozen=True)
class KernelSet:
    """Kernel pairs and DOC rows for levels 1..n, plus the scaled variants.

    ``theta(n, k)`` returns theta_{n-k}(n).  Tables grow incrementally via
    :meth:`extend`; completed instances are treated as immutable.
    """

    b0: np.ndarray
    b1: np.ndarray
    b0_scaled: np.ndarray
    b1_scaled: np.ndarray
    theta_rows: list[np.ndarray]
    theta_scaled_rows: list[np.ndarray]

    @classmethod
    def build(cls, mesh: TimeMesh, upto: int | None = None) -> "KernelSet":
        n = mesh.N if upto is None else upto
        if not 1 <= n <= mesh.N:
            raise IndexError(f"level {n} outside 1..{mesh.N}")
        b = np.array([bdf2_coeffs(mesh, k) for k in range(1, n + 1)])
        bs = np.array([scaled_bdf2_coeffs(mesh, k) for k in range(1, n + 1)])
        ks = cls(
            b0=b[:, 0],
            b1=b[:, 1],
            b0_scaled=bs[:, 0],
            b1_scaled=bs[:, 1],
            theta_rows=[doc_row(mesh, k) for k in range(1, n + 1)],
            theta_scaled_rows=[_doc_scaled_row(mesh, k) for k in range(1, n + 1)],
        )
        ks._check()
        return ks

    def extend(self, mesh: TimeMesh, upto: int | None = None) -> "KernelSet":
        """New KernelSet with rows appended up to ``upto`` (existing rows reused)."""
        n = mesh.N if upto is None else upto
        have = self.levels
        if n <= have:
            return self
        b = np.array([bdf2_coeffs(mesh, k) for k in range(have + 1, n + 1)])
        bs = np.array([scaled_bdf2_coeffs(mesh, k) for k in range(have + 1, n + 1)])
        ks = KernelSet(
            b0=np.concatenate([self.b0, b[:, 0]]),
            b1=np.concatenate([self.b1, b[:, 1]]),
            b0_scaled=np.concatenate([self.b0_scaled, bs[:, 0]]),
            b1_scaled=np.concatenate([self.b1_scaled, bs[:, 1]]),
            theta_rows=self.theta_rows + [doc_row(mesh, k) for k in range(have + 1, n + 1)],
            theta_scaled_rows=self.theta_scaled_rows
            + [_doc_scaled_row(mesh, k) for k in range(have + 1, n + 1)],
        )
        ks._check()
        return ks

    @property
    def levels(self) -> int:
        return len(self.theta_rows)

    def theta(self, n: int, k: int) -> float:
        """theta_{n-k}(n) for 1 <= k <= n."""
        return float(self.theta_rows[n - 1][k - 1])

    def _check(self):
        for i, row in enumerate(self.theta_rows):
            if not (row > 0.0).all():
                raise ValueError(f"DOC row {i + 1} has non-positive entries")
        for i, row in enumerate(self.theta_scaled_rows):
            if not (row > 0.0).all():
                raise ValueError(f"scaled DOC row {i + 1} has non-positive entries")
        d0 = np.array([row[-1] for row in self.theta_rows])
        if not np.allclose(d0 * self.b0, 1.0, rtol=1e-12, atol=0.0):
            raise ValueError("theta_0(n) * b0(n) deviates from 1")


# ---------------------------------------------------------------------------
# Positivity and eigenvalue bounds.

def positivity_rate(z: float, s: float) -> float:
    """Per-step rate (2+4z-z^(3/2))/(1+z) - s^(3/2)/(1+s) in the kernel
    positive-definiteness bound, as a function of the adjacent ratios."""
    if z < 0.0 or s < 0.0:
        raise ValueError("step ratios must be nonnegative")
    return (2.0 + 4.0 * z - z ** 1.5) / (1.0 + z) - s ** 1.5 / (1.0 + s)


@dataclass(frozen=True)
class StabilityConstants:
    """Eigenvalue bounds for the scaled kernel matrices at ratio cap r_s.

    m1 bounds the smallest eigenvalue of the symmetrised scaled kernel
    matrix from below, m2 the largest eigenvalue of its Gram matrix from
    above, and m3 = 2/(1 - m_star) the largest eigenvalue of the
    symmetrised scaled DOC matrix, where m_star = r_s^(3/2)/(1+2 r_s) < 1
    is the geometric decay rate of the scaled DOC entries.
    """

    r_s: float
    m1: float
    m2: float
    m3: float
    m_star: float


def _gram_row_bound(u: float, v: float) -> float:
    return (1.0 + 2.0 * u) * (1.0 + 2.0 * u + u ** 1.5) / (1.0 + u) ** 2 + v ** 1.5 * (
        1.0 + 2.0 * v + v ** 1.5
    ) / (1.0 + v) ** 2


def stability_constants(r_s: float) -> StabilityConstants:
    """Evaluate the four bounds at ratio cap r_s; inadmissible caps raise."""
    if r_s < 0.0:
        raise ValueError(f"ratio cap must be nonnegative, got {r_s}")
    m1 = (2.0 + 2.0 * r_s * (2.0 - math.sqrt(r_s))) / (1.0 + r_s)
    m_star = r_s ** 1.5 / (1.0 + 2.0 * r_s)
    if m1 <= 0.0 or m_star >= 1.0:
        raise ValueError(f"ratio cap {r_s} is past the positivity limit {RATIO_LIMIT}")
    m2 = 3.0 + _gram_row_bound(r_s, r_s)
    m3 = 2.0 / (1.0 - m_star)
    assert m2 >= 3.0 and m3 > 2.0
    return StabilityConstants(r_s=r_s, m1=m1, m2=m2, m3=m3, m_star=m_star)


def solvable_step_bound(r_n: float, delta: float) -> float:
    """Step-size bound 4*delta*(1+2r)/(1+r) under which the implicit step
    has a unique solution."""
    return 4.0 * delta * (1.0 + 2.0 * r_n) / (1.0 + r_n)


def dissipation_step_bound(mesh: TimeMesh, n: int, delta: float) -> float:
    """Step-size bound 4*delta*min{rate(r_n, r_{n+1}), (2+r_2)/(1+r_2)} under
    which the modified energy is non-increasing across step n."""
    r2 = mesh.ratio(2) if mesh.N >= 2 else 0.0
    rate = positivity_rate(mesh.ratio(n), mesh.ratio(n + 1))
    return 4.0 * delta * min(rate, (2.0 + r2) / (1.0 + r2))


# ---------------------------------------------------------------------------
# Applying the two-step derivative.

def d2_apply(history, mesh: TimeMesh, n: int) -> Field:
    """Two-step discrete derivative at level n from fields u^0..u^n.

    For n >= 2 this is b0(n)(u^n - u^{n-1}) + b1(n)(u^{n-1} - u^{n-2});
    at n = 1 it degenerates to (2/tau_1)(u^1 - u^0), where u^0 is the
    modified starting value produced by the initial-data construction.
    """
    if n < 1:
        raise IndexError("need n >= 1")
    if len(history) < n + 1:
        raise ValueError(f"history holds {len(history)} fields, need {n + 1}")
    grid = history[n].grid
    b0, b1 = bdf2_coeffs(mesh, n)
    un = history[n].values
    um1 = history[n - 1].values
    if n == 1:
        return Field(grid, b0 * (un - um1))
    um2 = history[n - 2].values
    return Field(grid, b0 * (un - um1) + b1 * (um1 - um2))


def d2_all(seq: np.ndarray, mesh: TimeMesh) -> np.ndarray:
    """Two-step derivatives D2 v^1..D2 v^N of a scalar sequence v^0..v^N."""
    seq = np.asarray(seq, dtype=float)
    N = seq.size - 1
    if N > mesh.N:
        raise ValueError("sequence longer than the mesh")
    out = np.empty(N)
    for n in range(1, N + 1):
        b0, b1 = bdf2_coeffs(mesh, n)
        out[n - 1] = b0 * (seq[n] - seq[n - 1])
        if n >= 2:
            out[n - 1] += b1 * (seq[n - 1] - seq[n - 2])
    return out
