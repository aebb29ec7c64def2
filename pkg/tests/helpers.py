"""Independent oracles used by the test suite.

These deliberately avoid the library's own code paths: eigenvalues come from
characteristic-polynomial bisection (via LDL' inertia counts), tail
probabilities from adaptive quadrature of the chi-square density.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad

# Published reference spectrum for a 15-indicator correlation PCA; exactly
# the first five entries exceed 1.
REF_EIGENVALUES = np.array([4.854, 2.254, 1.698, 1.444, 1.101, 0.980, 0.847,
                            0.505, 0.394, 0.276, 0.248, 0.188, 0.111, 0.085,
                            0.016])


def model_from_eigenvalues(lam, retained=None, n_obs=704):
    """Synthetic PcaModel with a prescribed spectrum, for arithmetic-level
    tests of retention, variance accounting, and index weights."""
    from inclpanel import multivariate as mv
    from inclpanel import numerics as nm

    lam = np.asarray(lam, dtype=float)
    p = lam.shape[0]
    retained = mv.kaiser_retained(lam) if retained is None else retained
    eigen = nm.EigenDecomposition(lam, np.eye(p))
    loadings = np.eye(p)[:, :retained] * np.sqrt(lam[:retained])
    return mv.PcaModel(
        symbols=tuple(f"x{j}" for j in range(p)),
        correlation=nm.SymMatrix(np.eye(p)),
        eigen=eigen,
        retained=retained,
        loadings=loadings,
        n_obs=n_obs,
    )


def count_eigenvalues_below(a: np.ndarray, x: float) -> int | None:
    """Number of eigenvalues of symmetric ``a`` strictly below ``x``, by
    Sylvester inertia of the LDL' pivots of (a - x I). Returns None when an
    unpivoted factorization breaks down (caller nudges x and retries)."""
    m = a - x * np.eye(a.shape[0])
    count = 0
    tiny = 1e-300
    for j in range(m.shape[0]):
        pivot = m[j, j]
        if abs(pivot) < tiny:
            return None
        if pivot < 0:
            count += 1
        if j + 1 < m.shape[0]:
            m[j + 1:, j + 1:] -= np.outer(m[j + 1:, j], m[j, j + 1:]) / pivot
    return count


def _count_with_retry(a: np.ndarray, x: float, scale: float) -> int:
    shift = 1e-13 * scale
    for attempt in range(6):
        c = count_eigenvalues_below(a, x + attempt * shift)
        if c is not None:
            return c
    raise RuntimeError("inertia count failed repeatedly")


def eigenvalues_by_bisection(a: np.ndarray, iterations: int = 90) -> np.ndarray:
    """All eigenvalues of symmetric ``a``, descending, located by bisection
    on the inertia count within Gershgorin bounds."""
    n = a.shape[0]
    radius = np.abs(a).sum(axis=1) - np.abs(np.diag(a))
    lo = float((np.diag(a) - radius).min()) - 1.0
    hi = float((np.diag(a) + radius).max()) + 1.0
    scale = max(1.0, abs(lo), abs(hi))
    values = []
    for j in range(1, n + 1):  # j-th smallest
        a_lo, a_hi = lo, hi
        for _ in range(iterations):
            mid = 0.5 * (a_lo + a_hi)
            if _count_with_retry(a, mid, scale) >= j:
                a_hi = mid
            else:
                a_lo = mid
        values.append(0.5 * (a_lo + a_hi))
    return np.array(values)[::-1]


def chi2_sf_by_quadrature(x: float, df: int) -> float:
    """P(chi2_df > x) by adaptive quadrature of the density."""
    half = df / 2.0
    log_norm = half * math.log(2.0) + math.lgamma(half)

    def density(t: float) -> float:
        if t <= 0.0:
            return 0.0
        return math.exp((half - 1.0) * math.log(t) - t / 2.0 - log_norm)

    if x == 0.0:
        return 1.0
    value, _err = quad(density, x, np.inf, limit=200)
    return value


def pearson_direct(x, y) -> float:
    """Pearson correlation straight from the textbook formula."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    yc = y - y.mean()
    return float((xc * yc).sum() / math.sqrt((xc ** 2).sum() * (yc ** 2).sum()))


def make_bundles(y, X, Z, x_names=None, z_names=None):
    """Wrap raw arrays as design/instrument bundles with paired pseudo-country
    keys (two rows per country so the Durbin-Watson precondition holds)."""
    from inclpanel.econometrics import DesignBundle, InstrumentSet

    n = len(y)
    keys = tuple((f"C{i // 2:05d}", 2000 + i % 2) for i in range(n))
    x_names = tuple(x_names or (f"x{j}" for j in range(X.shape[1])))
    z_names = tuple(z_names or (f"z{j}" for j in range(Z.shape[1])))
    design = DesignBundle(y=np.asarray(y, float), X=np.asarray(X, float),
                          names=x_names, keys=keys, effects="none",
                          dummy_names=())
    instruments = InstrumentSet(Z=np.asarray(Z, float), names=z_names,
                                keys=keys)
    return design, instruments


def simulate_static_iv(rng, n, beta=0.5, endogeneity=0.8,
                       instrument_strength=(1.0, 1.0), invalid=0.0):
    """Cross-section IV data: one endogenous regressor, q instruments.

    ``invalid`` leaks the structural error into the last instrument, breaking
    the exclusion restriction on purpose.
    """
    q = len(instrument_strength)
    z = rng.standard_normal((n, q))
    v = rng.standard_normal(n)
    w = rng.standard_normal(n)
    u = endogeneity * v + w
    x = z @ np.asarray(instrument_strength) + v
    if invalid:
        z[:, -1] = z[:, -1] + invalid * u
    y = beta * x + u
    return y, x[:, None], z
