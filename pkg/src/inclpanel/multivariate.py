"""Correlation PCA, rotation, adequacy statistics, and index aggregation.

The composite index pipeline is: standardized indicator matrix -> correlation
PCA -> retain components (eigenvalue > 1 by default) -> component scores ->
weighted aggregate -> sign orientation against an anchor indicator. Module
functions carry the individual steps; :class:`PrincipalComponentIndex` wraps
them behind the usual fit/transform estimator surface.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import numerics
from .errors import (
    DimensionMismatch,
    NoConvergence,
    NotPositiveDefinite,
    NotStandardized,
    SingularMatrix,
)
from .numerics import EigenDecomposition, SymMatrix

STANDARDIZATION_TOL = 1e-6
VARIMAX_SWEEP_BUDGET = 500
VARIMAX_ANGLE_TOL = 1e-12
KMO_RIDGE = 1e-8

WEIGHTINGS = ("variance_share", "first_component", "equal")


def check_matrix(x, n_cols: int | None = None) -> np.ndarray:
    """Light input validation: 2-d float array, NaN allowed as missing."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d array, got ndim={a.ndim}")
    if n_cols is not None and a.shape[1] != n_cols:
        raise DimensionMismatch(f"expected {n_cols} columns, got {a.shape[1]}")
    return a


@dataclass(frozen=True)
class KmoResult:
    overall: float
    per_variable_msa: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_variable_msa": [float(v) for v in self.per_variable_msa],
        }


@dataclass(frozen=True)
class BartlettResult:
    chi_square: float
    df: int
    p_value: float

    def to_json_dict(self) -> dict:
        return {"chi_square": self.chi_square, "df": self.df,
                "p_value": self.p_value}


@dataclass(frozen=True)
class PcaModel:
    symbols: tuple[str, ...]
    correlation: SymMatrix
    eigen: EigenDecomposition
    retained: int
    loadings: np.ndarray                      # p x m
    n_obs: int
    rank_deficient: bool = False
    rotated_loadings: np.ndarray | None = None
    rotation: np.ndarray | None = None        # m x m orthogonal
    kmo: KmoResult | None = None
    bartlett: BartlettResult | None = None

    @property
    def p(self) -> int:
        return len(self.symbols)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eigen.eigenvalues

    @property
    def retained_eigenvalues(self) -> np.ndarray:
        return self.eigen.eigenvalues[: self.retained]

    def variance_table(self) -> list[dict]:
        """Per-component eigenvalue and explained-variance accounting over
        all p components (percentages use the 100 * eigenvalue / p rule)."""
        lam = self.eigenvalues
        pct = 100.0 * lam / self.p
        cum = np.cumsum(pct)
        return [
            {"component": k + 1, "total": float(lam[k]),
             "pct_of_variance": float(pct[k]), "cumulative_pct": float(cum[k])}
            for k in range(self.p)
        ]

    def rotation_sums(self) -> list[dict] | None:
        """Sums of squared rotated loadings per retained component, sorted
        descending (column order matches the stored rotated loadings)."""
        if self.rotated_loadings is None:
            return None
        ssl = (self.rotated_loadings ** 2).sum(axis=0)
        pct = 100.0 * ssl / self.p
        cum = np.cumsum(pct)
        return [
            {"component": k + 1, "total": float(ssl[k]),
             "pct_of_variance": float(pct[k]), "cumulative_pct": float(cum[k])}
            for k in range(self.retained)
        ]

    def to_json_dict(self) -> dict:
        doc = {
            "variables": list(self.symbols),
            "n_obs": self.n_obs,
            "retained": self.retained,
            "rank_deficient": self.rank_deficient,
            "variance_table": self.variance_table(),
            "rotation_sums": self.rotation_sums(),
            "loadings": [[float(v) for v in row] for row in self.loadings],
            "rotated_loadings": None
            if self.rotated_loadings is None
            else [[float(v) for v in row] for row in self.rotated_loadings],
            "kmo": None if self.kmo is None else self.kmo.to_json_dict(),
            "bartlett": None
            if self.bartlett is None
            else self.bartlett.to_json_dict(),
        }
        return doc


@dataclass(frozen=True)
class IndexSeries:
    """Composite index per (country, year) row; NaN marks rows where any
    input indicator was missing."""

    keys: tuple[tuple[str, int], ...]
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["country", "year", "inclusiveness"])
            for (country, year), value in zip(self.keys, self.values):
                cell = "" if math.isnan(value) else repr(float(value))
                writer.writerow([country, year, cell])

    def per_country_means(self) -> list[tuple[str, float]]:
        """Time-averaged index per country, sorted descending."""
        sums: dict[str, list[float]] = {}
        for (country, _year), value in zip(self.keys, self.values):
            if not math.isnan(value):
                sums.setdefault(country, []).append(float(value))
        means = [(c, sum(v) / len(v)) for c, v in sums.items()]
        means.sort(key=lambda cv: (-cv[1], cv[0]))
        return means


def kmo(r: SymMatrix, ridge: bool = False) -> KmoResult:
    """Kaiser-Meyer-Olkin sampling adequacy from raw vs anti-image partial
    correlations. ``ridge`` opts into an eps * I bump when r is singular."""
    try:
        inv = numerics.inverse_spd(r)
    except NotPositiveDefinite:
        if not ridge:
            raise SingularMatrix(
                "correlation matrix is singular; redundant variables?"
            ) from None
        bumped = SymMatrix(r.entries + KMO_RIDGE * np.eye(r.order))
        inv = numerics.inverse_spd(bumped)
    d = np.sqrt(np.diag(inv))
    partial = -inv / np.outer(d, d)
    np.fill_diagonal(partial, 0.0)
    raw = r.entries.copy()
    np.fill_diagonal(raw, 0.0)
    r2 = raw ** 2
    q2 = partial ** 2
    per_var = r2.sum(axis=0) / (r2.sum(axis=0) + q2.sum(axis=0))
    overall = r2.sum() / (r2.sum() + q2.sum())
    return KmoResult(float(overall), per_var)


def bartlett(r: SymMatrix, n_obs: int) -> BartlettResult:
    """Sphericity test of the correlation matrix against the identity."""
    p = r.order
    if n_obs <= p:
        raise ValueError("need more observations than variables")
    chi = -(n_obs - 1 - (2 * p + 5) / 6.0) * numerics.log_det(r)
    chi = max(0.0, float(chi))
    df = p * (p - 1) // 2
    return BartlettResult(chi, df, numerics.chi2_sf(chi, df))


def kaiser_retained(eigenvalues) -> int:
    """Number of components with eigenvalue strictly greater than 1."""
    return int(np.sum(np.asarray(eigenvalues, dtype=float) > 1.0))


def pca_fit(data, retention="kaiser", symbols=None) -> PcaModel:
    """Fit a correlation PCA on standardized data (NaN rows are dropped
    listwise). ``retention`` is ``"kaiser"`` (eigenvalue > 1) or an integer
    for a fixed top-k cut."""
    x = check_matrix(data)
    n, p = x.shape
    if n <= p:
        raise ValueError(f"need n_obs > p, got {n} rows for {p} columns")
    if symbols is None:
        symbols = tuple(f"x{j}" for j in range(p))
    else:
        symbols = tuple(symbols)
        if len(symbols) != p:
            raise DimensionMismatch("symbols length does not match columns")
    for j in range(p):
        col = x[:, j]
        col = col[~np.isnan(col)]
        if col.size < 2:
            raise NotStandardized(j, math.nan, math.nan)
        mean, sd = float(col.mean()), float(col.std(ddof=1))
        if abs(mean) > STANDARDIZATION_TOL or abs(sd - 1.0) > STANDARDIZATION_TOL:
            raise NotStandardized(j, mean, sd)

    corr = numerics.correlation_matrix(x)
    if corr.meta["n_obs"] <= p:
        raise ValueError(
            f"need more than {p} listwise-complete rows, "
            f"got {corr.meta['n_obs']}"
        )
    eigen = numerics.sym_eigen(corr)
    lam = eigen.eigenvalues
    if retention == "kaiser":
        retained = kaiser_retained(lam)
    elif isinstance(retention, int) and not isinstance(retention, bool):
        if not 1 <= retention <= p:
            raise ValueError(f"top-k retention must be in [1, {p}]")
        retained = retention
    else:
        raise ValueError(f"unknown retention rule {retention!r}")
    loadings = eigen.eigenvectors[:, :retained] * np.sqrt(
        np.clip(lam[:retained], 0.0, None)
    )
    rank_deficient = bool(np.any(lam < 1e-12))

    try:
        kmo_result = kmo(corr)
    except (SingularMatrix, NotPositiveDefinite):
        kmo_result = None
    try:
        bartlett_result = bartlett(corr, corr.meta["n_obs"])
    except NotPositiveDefinite:
        bartlett_result = None

    return PcaModel(
        symbols=symbols,
        correlation=corr,
        eigen=eigen,
        retained=retained,
        loadings=loadings,
        n_obs=corr.meta["n_obs"],
        rank_deficient=rank_deficient,
        kmo=kmo_result,
        bartlett=bartlett_result,
    )


def varimax_criterion(loadings: np.ndarray) -> float:
    """Sum over columns of the variance of squared row-normalized loadings."""
    lam = np.asarray(loadings, dtype=float)
    h = np.sqrt((lam ** 2).sum(axis=1))
    h[h == 0.0] = 1.0
    sq = (lam / h[:, None]) ** 2
    return float(((sq ** 2).mean(axis=0) - sq.mean(axis=0) ** 2).sum())


def varimax(loadings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal varimax rotation (Kaiser row normalization, pairwise
    planar rotations). Returns ``(rotated, q)`` with ``rotated = loadings @ q``.

    Row normalization commutes with the right-multiplication by ``q``, so
    per-variable communalities are preserved exactly up to rounding.
    """
    lam = check_matrix(loadings)
    p, m = lam.shape
    if m < 2:
        raise DimensionMismatch("varimax requires at least 2 columns")
    before = varimax_criterion(lam)
    h = np.sqrt((lam ** 2).sum(axis=1))
    h[h == 0.0] = 1.0
    w = lam / h[:, None]
    q = np.eye(m)
    converged = False
    for _sweep in range(VARIMAX_SWEEP_BUDGET):
        largest = 0.0
        for i in range(m - 1):
            for j in range(i + 1, m):
                x, y = w[:, i], w[:, j]
                u = x * x - y * y
                v = 2.0 * x * y
                a, b = u.sum(), v.sum()
                c = (u * u - v * v).sum()
                d = 2.0 * (u * v).sum()
                num = d - 2.0 * a * b / p
                den = c - (a * a - b * b) / p
                angle = 0.25 * math.atan2(num, den)
                largest = max(largest, abs(angle))
                if abs(angle) < VARIMAX_ANGLE_TOL:
                    continue
                cs, sn = math.cos(angle), math.sin(angle)
                w_i = cs * w[:, i] + sn * w[:, j]
                w_j = -sn * w[:, i] + cs * w[:, j]
                w[:, i], w[:, j] = w_i, w_j
                q_i = cs * q[:, i] + sn * q[:, j]
                q_j = -sn * q[:, i] + cs * q[:, j]
                q[:, i], q[:, j] = q_i, q_j
        if largest < VARIMAX_ANGLE_TOL:
            converged = True
            break
    if not converged:
        raise NoConvergence("varimax rotation", VARIMAX_SWEEP_BUDGET)
    rotated = lam @ q
    # A planar optimum can drift below the start by rounding only; in that
    # case the identity rotation is the honest answer.
    if varimax_criterion(rotated) < before:
        return lam.copy(), np.eye(m)
    return rotated, q


def sorted_rotation(rotated: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Order rotated components by explained variance (descending sums of
    squared loadings) and fix each column's sign, for reproducible output."""
    ssl = (rotated ** 2).sum(axis=0)
    order = np.argsort(-ssl, kind="stable")
    rotated = rotated[:, order].copy()
    q = q[:, order].copy()
    for k in range(rotated.shape[1]):
        col = rotated[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            rotated[:, k] = -col
            q[:, k] = -q[:, k]
    return rotated, q


def scores(model: PcaModel, data, rotated: bool = False) -> np.ndarray:
    """Component scores for ``data`` under ``model``.

    Unrotated scores weight by the eigenvectors, so on the fitting sample the
    k-th column has variance close to the k-th eigenvalue. Rotated scores use
    regression-method weights (inverse correlation times rotated loadings).
    Rows with any missing indicator yield NaN scores.
    """
    x = check_matrix(data, n_cols=model.p)
    if rotated:
        if model.rotated_loadings is None:
            raise ValueError("model carries no rotated loadings")
        weights = numerics.solve_spd(model.correlation, model.rotated_loadings)
    else:
        weights = model.eigen.eigenvectors[:, : model.retained]
    out = x @ weights
    out[np.isnan(x).any(axis=1)] = np.nan
    return out


def build_index(
    score_matrix,
    model: PcaModel,
    keys,
    weighting: str = "variance_share",
) -> IndexSeries:
    """Aggregate retained-component scores into one index per row.

    ``variance_share`` weights each component by its eigenvalue share among
    the retained set; ``first_component`` takes the leading component alone;
    ``equal`` is the unweighted mean. Weights always sum to one and are
    recorded in the metadata.
    """
    if model.retained == 0:
        raise DimensionMismatch("no components retained; cannot build an index")
    s = check_matrix(score_matrix, n_cols=model.retained)
    if len(keys) != s.shape[0]:
        raise DimensionMismatch("keys length does not match score rows")
    m = model.retained
    if weighting == "variance_share":
        lam = np.asarray(model.retained_eigenvalues, dtype=float)
        weights = lam / lam.sum()
    elif weighting == "first_component":
        weights = np.zeros(m)
        weights[0] = 1.0
    elif weighting == "equal":
        weights = np.full(m, 1.0 / m)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    values = s @ weights
    metadata = {
        "retained": m,
        "weighting": weighting,
        "weights": [float(w) for w in weights],
    }
    return IndexSeries(tuple(tuple(k) for k in keys), values, metadata)


def orient_index(series: IndexSeries, anchor_values, anchor_symbol: str = "") -> IndexSeries:
    """Flip the whole index if it correlates negatively with the anchor
    indicator, making "higher index = better" deterministic."""
    anchor = np.asarray(anchor_values, dtype=float)
    if anchor.shape[0] != series.values.shape[0]:
        raise DimensionMismatch("anchor length does not match index rows")
    both = ~(np.isnan(series.values) | np.isnan(anchor))
    corr = 0.0
    if both.sum() >= 3:
        a = series.values[both]
        b = anchor[both]
        sa, sb = a.std(), b.std()
        if sa > 0 and sb > 0:
            corr = float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))
    flipped = corr < 0
    values = -series.values if flipped else series.values.copy()
    metadata = dict(series.metadata)
    metadata.update(
        {"anchor": anchor_symbol, "anchor_correlation": corr,
         "anchor_flipped": flipped}
    )
    return IndexSeries(series.keys, values, metadata)


class PrincipalComponentIndex(BaseEstimator, TransformerMixin):
    """Composite-index estimator over a standardized indicator matrix.

    Parameters
    ----------
    retention : "kaiser" or int
        Component retention rule: eigenvalue > 1, or a fixed count.
    rotate : bool
        Apply varimax to the retained loadings (interpretation aid; scoring
        stays unrotated unless ``use_rotated_scores``).
    use_rotated_scores : bool
        Score with regression-method weights from the rotated loadings.
    weighting : str
        Aggregation rule for :meth:`index`, one of ``variance_share``,
        ``first_component``, ``equal``.
    anchor : str or None
        Indicator symbol used to orient the index sign in :meth:`index`.
    symbols : sequence of str or None
        Column names; positional ``x0..`` when omitted.

    Attributes
    ----------
    model_ : PcaModel
    eigenvalues_, loadings_, rotated_loadings_, retained_, kmo_, bartlett_
        Convenience views into the fitted model.
    """

    def __init__(self, retention="kaiser", rotate=True,
                 use_rotated_scores=False, weighting="variance_share",
                 anchor=None, symbols=None):
        self.retention = retention
        self.rotate = rotate
        self.use_rotated_scores = use_rotated_scores
        self.weighting = weighting
        self.anchor = anchor
        self.symbols = symbols

    def fit(self, X, y=None):
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        model = pca_fit(X, retention=self.retention, symbols=self.symbols)
        if self.rotate and model.retained >= 2:
            rotated, q = varimax(model.loadings)
            rotated, q = sorted_rotation(rotated, q)
            model = replace(model, rotated_loadings=rotated, rotation=q)
        if self.use_rotated_scores and model.rotated_loadings is None:
            raise ValueError(
                "use_rotated_scores requires rotate=True and >= 2 retained "
                "components"
            )
        self.model_ = model
        self.eigenvalues_ = model.eigenvalues
        self.loadings_ = model.loadings
        self.rotated_loadings_ = model.rotated_loadings
        self.retained_ = model.retained
        self.kmo_ = model.kmo
        self.bartlett_ = model.bartlett
        return self

    def transform(self, X):
        return scores(self.model_, X, rotated=self.use_rotated_scores)

    def index(self, X, keys) -> IndexSeries:
        """Component scores aggregated to an oriented IndexSeries."""
        series = build_index(self.transform(X), self.model_, keys,
                             weighting=self.weighting)
        series.metadata["rotated_scores"] = self.use_rotated_scores
        if self.anchor is not None:
            j = list(self.model_.symbols).index(self.anchor)
            x = check_matrix(X, n_cols=self.model_.p)
            series = orient_index(series, x[:, j], anchor_symbol=self.anchor)
        return series
