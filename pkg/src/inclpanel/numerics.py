"""Dense symmetric linear algebra and distribution functions.

Everything downstream (correlation PCA, sampling-adequacy statistics, GMM
weighting) runs through this module, so the numerical conventions are fixed
here once:

* eigenvalues are sorted descending, ties broken by original index;
* each eigenvector's largest-magnitude component is made non-negative, which
  removes the sign ambiguity of eigendecompositions across platforms;
* positive-definite solves go through an unpivoted Cholesky factorization and
  report the offending pivot on breakdown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientObservations,
    NoConvergence,
    NotPositiveDefinite,
    SingularMatrix,
    ZeroVariance,
)

JACOBI_SWEEP_BUDGET = 100
JACOBI_OFFDIAG_TOL = 1e-13


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric real matrix with a small metadata bag.

    Symmetry is enforced at construction (1e-10 relative tolerance) and the
    stored entries are exactly symmetrized so downstream algorithms can rely
    on ``entries[i, j] == entries[j, i]``.
    """

    entries: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix entries must be finite")
        scale = max(1.0, float(np.abs(a).max()))
        if np.abs(a - a.T).max() > 1e-10 * scale:
            raise ValueError("matrix is not symmetric to 1e-10 relative tolerance")
        object.__setattr__(self, "entries", (a + a.T) / 2.0)

    @property
    def order(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues (descending) and column-aligned orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def correlation_matrix(data: np.ndarray) -> SymMatrix:
    """Pearson correlation matrix over listwise-complete rows.

    Missing observations are NaN cells; any row containing a NaN is dropped
    before the correlations are computed, and the number of dropped rows is
    recorded in ``meta["n_dropped_rows"]`` alongside ``meta["n_obs"]``.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError("need a 2-d array with at least 2 columns")
    complete = ~np.isnan(x).any(axis=1)
    rows = x[complete]
    n = rows.shape[0]
    if n < 3:
        raise InsufficientObservations(
            f"only {n} listwise-complete rows; need at least 3"
        )
    sd = rows.std(axis=0, ddof=1)
    dead = np.nonzero(sd == 0.0)[0]
    if dead.size:
        raise ZeroVariance(f"column {int(dead[0])}")
    centered = rows - rows.mean(axis=0)
    r = (centered.T @ centered) / np.outer(sd, sd) / (n - 1)
    r = np.clip((r + r.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return SymMatrix(r, meta={"n_obs": n, "n_dropped_rows": int(x.shape[0] - n)})


def sym_eigen(m: SymMatrix) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Rotations run until the off-diagonal Frobenius norm falls below
    ``JACOBI_OFFDIAG_TOL`` (relative to the matrix scale); the sweep budget is
    ``JACOBI_SWEEP_BUDGET``. Unconditionally stable for the modest orders used
    here.
    """
    a = m.entries.copy()
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return _finish_eigen(np.array([a[0, 0]]), v)

    scale = max(1.0, float(np.linalg.norm(a)))
    tol = JACOBI_OFFDIAG_TOL * scale
    for _sweep in range(JACOBI_SWEEP_BUDGET):
        # Norm of the off-diagonal part, summed directly (the trace-subtraction
        # shortcut cancels catastrophically once the matrix is near-diagonal).
        off = math.sqrt(2.0 * float((np.triu(a, 1) ** 2).sum()))
        if off <= tol:
            return _finish_eigen(np.diag(a).copy(), v)
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol / (n * n):
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (
                    abs(theta) + math.sqrt(theta * theta + 1.0)
                )
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                a[p, :], a[q, :] = a[:, p].copy(), a[:, q].copy()
                a[p, q] = a[q, p] = 0.0
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                vp = c * v[:, p] - s * v[:, q]
                vq = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = vp, vq
    off = math.sqrt(2.0 * float((np.triu(a, 1) ** 2).sum()))
    if off <= tol:
        return _finish_eigen(np.diag(a).copy(), v)
    raise NoConvergence("Jacobi eigensolver", JACOBI_SWEEP_BUDGET)


def _finish_eigen(values: np.ndarray, vectors: np.ndarray) -> EigenDecomposition:
    # Descending sort, stable so equal eigenvalues keep their original order.
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    for k in range(vectors.shape[1]):
        col = vectors[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            vectors[:, k] = -col
    return EigenDecomposition(values, vectors)


def cholesky(m: SymMatrix) -> np.ndarray:
    """Lower-triangular Cholesky factor; raises on a non-positive pivot."""
    a = m.entries
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if not (d > 0.0) or not math.isfinite(d):
            raise NotPositiveDefinite(j)
        low[j, j] = math.sqrt(d)
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def solve_spd(m: SymMatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve ``m @ x = rhs`` for symmetric positive-definite ``m``."""
    low = cholesky(m)
    b = np.asarray(rhs, dtype=float)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    n, k = low.shape[0], b.shape[1]
    y = np.zeros((n, k))
    for i in range(n):
        y[i] = (b[i] - low[i, :i] @ y[:i]) / low[i, i]
    x = np.zeros((n, k))
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - low[i + 1:, i] @ x[i + 1:]) / low[i, i]
    return x[:, 0] if squeeze else x


def inverse_spd(m: SymMatrix) -> np.ndarray:
    return solve_spd(m, np.eye(m.order))


def solve_square(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a general square system by LU with partial pivoting (used for
    just-identified GMM where Z'X is square but not symmetric)."""
    m = np.asarray(a, dtype=float).copy()
    b = np.asarray(rhs, dtype=float)
    squeeze = b.ndim == 1
    if squeeze:
        b = b[:, None]
    b = b.copy()
    n = m.shape[0]
    if m.shape != (n, n) or b.shape[0] != n:
        raise ValueError("shape mismatch in square solve")
    for j in range(n):
        pivot = j + int(np.argmax(np.abs(m[j:, j])))
        if m[pivot, j] == 0.0:
            raise SingularMatrix("square system is singular")
        if pivot != j:
            m[[j, pivot]] = m[[pivot, j]]
            b[[j, pivot]] = b[[pivot, j]]
        factors = m[j + 1:, j] / m[j, j]
        m[j + 1:, j:] -= np.outer(factors, m[j, j:])
        b[j + 1:] -= np.outer(factors, b[j])
    x = np.zeros_like(b)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - m[i, i + 1:] @ x[i + 1:]) / m[i, i]
    return x[:, 0] if squeeze else x


def log_det(m: SymMatrix) -> float:
    """ln(det(m)) accumulated in log space via the Cholesky diagonal."""
    low = cholesky(m)
    return 2.0 * float(np.sum(np.log(np.diag(low))))


# --- chi-square distribution ----------------------------------------------

_GAMMAINC_TOL = 1e-14
_GAMMAINC_MAX_ITER = 500


def _gammainc_lower_series(a: float, x: float) -> float:
    # Series expansion of the regularized lower incomplete gamma, for x < a+1.
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(_GAMMAINC_MAX_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _GAMMAINC_TOL:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gammainc_upper_contfrac(a: float, x: float) -> float:
    # Lentz continued fraction for the regularized upper incomplete gamma,
    # for x >= a+1.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMAINC_MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMAINC_TOL:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def _reg_gamma_pq(a: float, x: float) -> tuple[float, float]:
    if x < 0 or a <= 0:
        raise ValueError("require x >= 0 and a > 0")
    if x == 0.0:
        return 0.0, 1.0
    if x < a + 1.0:
        p = _gammainc_lower_series(a, x)
        return p, 1.0 - p
    q = _gammainc_upper_contfrac(a, x)
    return 1.0 - q, q


def chi2_sf(x: float, df: int) -> float:
    """Survival function P(chi2_df > x) via the regularized incomplete gamma."""
    if df <= 0:
        raise ValueError("df must be a positive integer")
    if x < 0:
        raise ValueError("x must be non-negative")
    _, q = _reg_gamma_pq(df / 2.0, x / 2.0)
    return min(1.0, max(0.0, q))


def chi2_cdf(x: float, df: int) -> float:
    if df <= 0:
        raise ValueError("df must be a positive integer")
    if x < 0:
        raise ValueError("x must be non-negative")
    p, _ = _reg_gamma_pq(df / 2.0, x / 2.0)
    return min(1.0, max(0.0, p))
