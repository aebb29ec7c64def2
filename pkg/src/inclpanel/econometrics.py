"""Dynamic-panel two-step GMM with instruments, effects handling, and the
regression diagnostic suite.

The estimation chain is: assemble a design (effects transform, lagged
dependent, interactions, year dummies) -> build an instrument matrix aligned
row-for-row with the design -> two-step GMM with a country-clustered
weighting matrix -> J statistic, Durbin-Watson, adjusted R2.

Conventions fixed here:

* ``first_difference_plus_time`` differences within country and appends year
  dummies; with a lagged dependent variable this consumes two leading years
  per country (so a complete 32 x 22 panel yields 640 rows).
* instruments built from lag recipes always use *levels*, whatever the
  effects transform; exogenous regressors instrument themselves as their
  transformed design columns.
* the step-two weighting matrix is the inverse of the country-clustered
  moment outer product; if it is singular a 1e-10 ridge is applied and the
  estimate carries a warning flag rather than failing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics
from .errors import (
    CollinearColumns,
    DegenerateVariance,
    DimensionMismatch,
    EmptyDesign,
    InsufficientObservations,
    InvalidSpec,
    NotPositiveDefinite,
    OrderConditionViolated,
    SingularMatrix,
    TooFewResiduals,
    UnknownVariable,
)
from .numerics import SymMatrix
from .paneldata import PanelDataset

EFFECTS_MODES = (
    "none",
    "time_dummies",
    "entity_demeaned_plus_time",
    "first_difference_plus_time",
)

CONDITION_LIMIT = 1e12
WEIGHT_RIDGE = 1e-10


@dataclass(frozen=True)
class InstrumentRecipe:
    """How to build the instrument matrix.

    ``lags`` maps a variable symbol to an inclusive (lo, hi) range of level
    lags used to instrument it. ``exogenous`` lists design columns entering
    as their own instruments; ``None`` means every design column except the
    lagged dependent variable. ``collapse`` emits one column per lag distance
    instead of one per (distance, period). ``include_effects`` carries the
    design's year dummies and intercept into the instrument set.
    """

    lags: dict = field(default_factory=dict)
    exogenous: tuple[str, ...] | None = None
    collapse: bool = True
    include_effects: bool = True

    def __post_init__(self):
        for sym, rng in self.lags.items():
            lo, hi = rng
            if lo < 1 or hi < lo:
                raise InvalidSpec(f"bad lag range {rng} for {sym!r}")

    def to_json_dict(self) -> dict:
        return {
            "lags": {k: list(v) for k, v in self.lags.items()},
            "exogenous": None if self.exogenous is None else list(self.exogenous),
            "collapse": self.collapse,
            "include_effects": self.include_effects,
        }


@dataclass(frozen=True)
class GmmModelSpec:
    """One estimated model: dependent, regressors, effects mode, instruments.

    ``determinants`` entries may be interaction terms written ``"A*B"``; the
    product is taken after the effects transform is applied to each factor.
    ``effects=None`` resolves to first differences plus time dummies when a
    lagged dependent variable is present, entity demeaning plus time dummies
    otherwise.
    """

    dependent: str
    controls: tuple[str, ...] = ()
    determinants: tuple[str, ...] = ()
    lag_dependent: bool = True
    effects: str | None = None
    intercept: bool = True
    recipe: InstrumentRecipe = field(default_factory=InstrumentRecipe)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "determinants", tuple(self.determinants))
        plain = [self.dependent, *self.controls,
                 *[d for d in self.determinants if "*" not in d]]
        if len(set(plain)) != len(plain):
            raise InvalidSpec("symbol repeated across dependent/controls/determinants")
        if len(set(self.determinants)) != len(self.determinants):
            raise InvalidSpec("duplicate determinant entry")
        if self.effects is not None and self.effects not in EFFECTS_MODES:
            raise InvalidSpec(f"effects must be one of {EFFECTS_MODES}")

    @property
    def resolved_effects(self) -> str:
        if self.effects is not None:
            return self.effects
        return ("first_difference_plus_time" if self.lag_dependent
                else "entity_demeaned_plus_time")

    @property
    def resolved_recipe(self) -> InstrumentRecipe:
        """Default instruments for a dynamic spec: collapsed levels lags 2..3
        of the dependent plus the exogenous regressors."""
        if self.lag_dependent and not self.recipe.lags:
            return replace(self.recipe, lags={self.dependent: (2, 3)})
        return self.recipe

    @property
    def lag_label(self) -> str:
        return f"{self.dependent}(-1)"

    def regressor_entries(self) -> list[str]:
        return [*self.controls, *self.determinants]


@dataclass(frozen=True)
class DesignBundle:
    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]
    keys: tuple[tuple[str, int], ...]
    effects: str
    dummy_names: tuple[str, ...]

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def countries(self) -> list[str]:
        return [c for c, _ in self.keys]


@dataclass(frozen=True)
class InstrumentSet:
    Z: np.ndarray
    names: tuple[str, ...]
    keys: tuple[tuple[str, int], ...]
    dropped_empty: tuple[str, ...] = ()


@dataclass(frozen=True)
class GmmEstimate:
    names: tuple[str, ...]
    coefficients: np.ndarray
    std_errors: np.ndarray
    residuals: np.ndarray
    keys: tuple[tuple[str, int], ...]
    j_statistic: float
    j_pvalue: float
    just_identified: bool
    durbin_watson: float
    adjusted_r2: float
    n_obs: int
    n_instruments: int
    n_countries: int
    n_params: int
    weighting_matrix_spec: str
    instrument_names: tuple[str, ...]
    ridge_applied: bool
    effects: str
    dummy_names: tuple[str, ...] = ()
    w2: np.ndarray | None = None
    name: str = ""

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "coefficients": {
                n: float(c) for n, c in zip(self.names, self.coefficients)
            },
            "std_errors": {
                n: float(s) for n, s in zip(self.names, self.std_errors)
            },
            "j_statistic": self.j_statistic,
            "j_pvalue": self.j_pvalue,
            "just_identified": self.just_identified,
            "durbin_watson": self.durbin_watson,
            "adjusted_r2": self.adjusted_r2,
            "n_obs": self.n_obs,
            "n_instruments": self.n_instruments,
            "n_countries": self.n_countries,
            "n_params": self.n_params,
            "weighting_matrix_spec": self.weighting_matrix_spec,
            "instruments": list(self.instrument_names),
            "ridge_applied": self.ridge_applied,
            "effects": self.effects,
        }


def _lagged_grid(grid: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(grid, np.nan)
    out[:, k:] = grid[:, :-k]
    return out


def _diff_grid(grid: np.ndarray) -> np.ndarray:
    out = np.full_like(grid, np.nan)
    out[:, 1:] = grid[:, 1:] - grid[:, :-1]
    return out


def _interaction_factors(entry: str) -> list[str]:
    return [part.strip() for part in entry.split("*")]


def build_design(ds: PanelDataset, spec: GmmModelSpec) -> DesignBundle:
    """Assemble the estimation sample: rows are (country, year) pairs with
    complete data after lagging and the effects transform."""
    effects = spec.resolved_effects
    entries = spec.regressor_entries()
    factor_syms: set[str] = set()
    for entry in entries:
        for sym in _interaction_factors(entry):
            factor_syms.add(sym)
    base_syms = {spec.dependent, *factor_syms}
    for sym in base_syms:
        ds.var_index(sym)  # raises UnknownVariable

    grids = {sym: ds.series(sym) for sym in base_syms}
    if spec.lag_dependent:
        grids[spec.lag_label] = _lagged_grid(grids[spec.dependent], 1)
    if effects == "first_difference_plus_time":
        grids = {name: _diff_grid(g) for name, g in grids.items()}

    def column_grid(entry: str) -> np.ndarray:
        factors = _interaction_factors(entry)
        if len(factors) == 1:
            return grids[factors[0]]
        prod = grids[factors[0]].copy()
        for sym in factors[1:]:
            prod = prod * grids[sym]
        return prod

    col_names = list(entries)
    col_grids = [column_grid(e) for e in entries]
    if spec.lag_dependent:
        col_names.append(spec.lag_label)
        col_grids.append(grids[spec.lag_label])
    y_grid = grids[spec.dependent]

    complete = ~np.isnan(y_grid)
    for g in col_grids:
        complete &= ~np.isnan(g)
    if not complete.any():
        raise EmptyDesign("no complete rows survive the transform")

    if effects == "entity_demeaned_plus_time":
        # Within transform over the estimation sample only; interactions are
        # rebuilt from the demeaned factors afterwards.
        demeaned = {}
        for name, g in grids.items():
            g = g.copy()
            for i in range(g.shape[0]):
                sel = complete[i]
                if sel.any():
                    g[i, sel] = g[i, sel] - g[i, sel].mean()
            demeaned[name] = g
        grids = demeaned
        col_grids = [column_grid(e) for e in entries]
        if spec.lag_dependent:
            col_grids.append(grids[spec.lag_label])
        y_grid = grids[spec.dependent]

    keys = []
    for i, country in enumerate(ds.countries):
        for t, year in enumerate(ds.years):
            if complete[i, t]:
                keys.append((country, year))
    sel = complete.reshape(-1)
    y = y_grid.reshape(-1)[sel]
    cols = [g.reshape(-1)[sel] for g in col_grids]

    dummy_names: list[str] = []
    if effects in ("time_dummies", "entity_demeaned_plus_time",
                   "first_difference_plus_time"):
        years_present = sorted({yr for _, yr in keys})
        row_years = np.array([yr for _, yr in keys])
        for yr in years_present[1:]:
            dummy = (row_years == yr).astype(float)
            if effects == "entity_demeaned_plus_time":
                row_countries = np.array([c for c, _ in keys])
                for country in dict.fromkeys(row_countries):
                    mask = row_countries == country
                    dummy[mask] = dummy[mask] - dummy[mask].mean()
            cols.append(dummy)
            dummy_names.append(f"year_{yr}")
        col_names.extend(dummy_names)
    if spec.intercept and effects in ("none", "time_dummies"):
        cols.append(np.ones(len(keys)))
        col_names.append("C")

    X = np.column_stack(cols) if cols else np.empty((len(keys), 0))
    _check_condition(X, col_names)
    return DesignBundle(
        y=y, X=X, names=tuple(col_names), keys=tuple(keys),
        effects=effects, dummy_names=tuple(dummy_names),
    )


def _check_condition(X: np.ndarray, names: list[str]) -> None:
    if X.shape[1] == 0:
        raise EmptyDesign("design has no regressors")
    xtx = SymMatrix(X.T @ X)
    lam = numerics.sym_eigen(xtx).eigenvalues
    top, bottom = float(lam[0]), float(lam[-1])
    cond = math.inf if bottom <= 0 else top / bottom
    if cond > CONDITION_LIMIT:
        raise CollinearColumns(
            f"condition number {cond:.3g} exceeds {CONDITION_LIMIT:.0e} "
            f"(columns: {', '.join(names)})"
        )


def build_instruments(
    ds: PanelDataset, spec: GmmModelSpec, design: DesignBundle | None = None
) -> InstrumentSet:
    """Instrument matrix aligned with the design rows.

    Lag-recipe columns hold *levels* of the instrumented variable; cells where
    the requested lag is unavailable are zero, and columns that end up all
    zero are dropped and reported.
    """
    if design is None:
        design = build_design(ds, spec)
    recipe = spec.resolved_recipe
    year_of = {yr: t for t, yr in enumerate(ds.years)}
    country_of = {c: i for i, c in enumerate(ds.countries)}

    cols: list[np.ndarray] = []
    names: list[str] = []
    for sym, (lo, hi) in recipe.lags.items():
        grid = ds.series(sym)
        for ell in range(lo, hi + 1):
            stacked = np.zeros(design.n_obs)
            for r, (country, year) in enumerate(design.keys):
                t = year_of[year] - ell
                if t >= 0:
                    v = grid[country_of[country], t]
                    if not math.isnan(v):
                        stacked[r] = v
            if recipe.collapse:
                cols.append(stacked)
                names.append(f"{sym}_L{ell}")
            else:
                for yr in sorted({y for _, y in design.keys}):
                    period = np.where(
                        np.array([y for _, y in design.keys]) == yr, stacked, 0.0
                    )
                    cols.append(period)
                    names.append(f"{sym}_L{ell}_y{yr}")

    effect_cols = set(design.dummy_names) | {"C"}
    if recipe.exogenous is None:
        exo = [n for n in design.names
               if n != spec.lag_label and n not in effect_cols]
    else:
        exo = list(recipe.exogenous)
        unknown = [n for n in exo if n not in design.names]
        if unknown:
            raise UnknownVariable(unknown[0])
    for n in exo:
        cols.append(design.X[:, design.names.index(n)])
        names.append(n)
    if recipe.include_effects:
        for n in design.names:
            if n in effect_cols:
                cols.append(design.X[:, design.names.index(n)])
                names.append(n)

    dropped = []
    kept_cols, kept_names = [], []
    for col, n in zip(cols, names):
        if np.all(col == 0.0):
            dropped.append(n)
        else:
            kept_cols.append(col)
            kept_names.append(n)
    n_params = design.X.shape[1]
    if len(kept_cols) < n_params:
        raise OrderConditionViolated(n_params, len(kept_cols))
    Z = np.column_stack(kept_cols)
    return InstrumentSet(Z=Z, names=tuple(kept_names), keys=design.keys,
                         dropped_empty=tuple(dropped))


def _inverse_or_ridge(m: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        return numerics.inverse_spd(SymMatrix(m)), False
    except NotPositiveDefinite:
        bumped = m + WEIGHT_RIDGE * np.eye(m.shape[0])
        return numerics.inverse_spd(SymMatrix(bumped)), True


def _clustered_moment_cov(Z: np.ndarray, u: np.ndarray,
                          countries: list[str]) -> np.ndarray:
    """S = sum_c (Z_c' u_c)(Z_c' u_c)' / n, clusters = countries."""
    n, q = Z.shape
    s = np.zeros((q, q))
    zu = Z * u[:, None]
    labels = np.array(countries)
    for country in dict.fromkeys(countries):
        m_c = zu[labels == country].sum(axis=0)
        s += np.outer(m_c, m_c)
    return s / n


def gmm_two_step(design: DesignBundle, instruments: InstrumentSet) -> GmmEstimate:
    """Two-step GMM: 2SLS first step, country-clustered optimal weighting in
    the second, sandwich standard errors from the step-two objective."""
    if design.keys != instruments.keys:
        raise DimensionMismatch("design and instrument rows are not aligned")
    X, y, Z = design.X, design.y, instruments.Z
    n, k = X.shape
    q = Z.shape[1]
    if n <= k:
        raise InsufficientObservations(f"{n} rows for {k} parameters")
    if q < k:
        raise OrderConditionViolated(k, q)

    ridge = False
    xz = X.T @ Z
    zy = Z.T @ y
    just = q == k

    if just:
        # The just-identified estimate is the same for every weighting
        # matrix, so solve the moment conditions Z'X b = Z'y directly; this
        # sidesteps ridge noise when the clustered moment matrix is singular.
        try:
            beta2 = numerics.solve_square(xz.T, zy)
        except SingularMatrix:
            raise CollinearColumns(
                "Z'X is rank deficient; instruments do not identify the "
                "parameters"
            ) from None
        u2 = y - X @ beta2
        s = _clustered_moment_cov(Z, u2, design.countries)
        inv_zx = numerics.solve_square(xz.T, np.eye(k))
        vcov = n * inv_zx @ s @ inv_zx.T
        w2 = None
        j = 0.0
        j_pvalue = 1.0
    else:
        w1, r = _inverse_or_ridge(Z.T @ Z / n)
        ridge |= r

        def solve_beta(w: np.ndarray) -> np.ndarray:
            a = xz @ w @ xz.T
            try:
                return numerics.solve_spd(SymMatrix(a), xz @ w @ zy)
            except NotPositiveDefinite:
                raise CollinearColumns(
                    "Z'X is rank deficient; instruments do not identify the "
                    "parameters"
                ) from None

        beta1 = solve_beta(w1)
        u1 = y - X @ beta1
        s = _clustered_moment_cov(Z, u1, design.countries)
        w2, r = _inverse_or_ridge(s)
        ridge |= r
        beta2 = solve_beta(w2)
        u2 = y - X @ beta2

        a2 = xz @ w2 @ xz.T
        vcov = n * numerics.inverse_spd(SymMatrix((a2 + a2.T) / 2.0))
        gbar = Z.T @ u2 / n
        j = max(0.0, float(n * gbar @ w2 @ gbar))
        j_pvalue = numerics.chi2_sf(j, q - k)

    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))

    dw = durbin_watson(u2, design.countries)
    ar2 = adjusted_r2(u2, y, k)
    return GmmEstimate(
        names=design.names,
        coefficients=beta2,
        std_errors=se,
        residuals=u2,
        keys=design.keys,
        j_statistic=j,
        j_pvalue=j_pvalue,
        just_identified=just,
        durbin_watson=dw,
        adjusted_r2=ar2,
        n_obs=n,
        n_instruments=q,
        n_countries=len(dict.fromkeys(design.countries)),
        n_params=k,
        weighting_matrix_spec="two-step, clustered by country",
        instrument_names=instruments.names,
        ridge_applied=ridge,
        effects=design.effects,
        dummy_names=design.dummy_names,
        w2=w2,
    )


def j_statistic(est: GmmEstimate, instruments: InstrumentSet,
                design: DesignBundle) -> tuple[float, float]:
    """Hansen over-identification statistic for a computed estimate."""
    if design.keys != instruments.keys:
        raise DimensionMismatch("design and instrument rows are not aligned")
    Z = instruments.Z
    n = Z.shape[0]
    u = design.y - design.X @ est.coefficients
    gbar = Z.T @ u / n
    if est.w2 is not None:
        w2 = est.w2
    else:
        w2, _ = _inverse_or_ridge(_clustered_moment_cov(Z, u, design.countries))
    j = max(0.0, float(n * gbar @ w2 @ gbar))
    df = Z.shape[1] - design.X.shape[1]
    p = 1.0 if df == 0 else numerics.chi2_sf(j, df)
    return j, p


def durbin_watson(residuals: np.ndarray, countries: list[str]) -> float:
    """First-order serial correlation diagnostic; differences are taken only
    between consecutive rows of the same country."""
    e = np.asarray(residuals, dtype=float)
    labels = list(countries)
    if len(e) != len(labels):
        raise DimensionMismatch("residuals and country labels differ in length")
    counts: dict[str, int] = {}
    for c in labels:
        counts[c] = counts.get(c, 0) + 1
    thin = [c for c, cnt in counts.items() if cnt < 2]
    if thin:
        raise TooFewResiduals(f"country {thin[0]!r} has fewer than 2 residuals")
    num = 0.0
    for i in range(1, len(e)):
        if labels[i] == labels[i - 1]:
            num += (e[i] - e[i - 1]) ** 2
    den = float(e @ e)
    return 0.0 if den == 0.0 else float(num / den)


def adjusted_r2(residuals: np.ndarray, y: np.ndarray, n_params: int) -> float:
    """1 - (SSR/(n-k)) / (SST/(n-1)), SST about the mean of the (transformed)
    dependent variable."""
    e = np.asarray(residuals, dtype=float)
    yy = np.asarray(y, dtype=float)
    n = yy.shape[0]
    if n <= n_params + 1:
        raise InsufficientObservations(
            f"{n} rows with {n_params} parameters leave no freedom"
        )
    sst = float(((yy - yy.mean()) ** 2).sum())
    if sst == 0.0:
        raise DegenerateVariance("dependent variable has zero variance")
    ssr = float(e @ e)
    return 1.0 - (ssr / (n - n_params)) / (sst / (n - 1))


# --- reporting --------------------------------------------------------------

def merged_coefficient_order(estimates: list[GmmEstimate],
                             show_effects: bool = False) -> list[str]:
    """Coefficient display order across models: regressors by first
    appearance, then lagged dependents, then the constant."""
    regular: list[str] = []
    lagged: list[str] = []
    for est in estimates:
        hidden = set() if show_effects else set(est.dummy_names)
        for n in est.names:
            if n in hidden or n == "C":
                continue
            target = lagged if n.endswith("(-1)") else regular
            if n not in target:
                target.append(n)
    order = regular + lagged
    if any("C" in est.names for est in estimates):
        order.append("C")
    return order


def render_estimates_table(estimates: list[GmmEstimate],
                           show_effects: bool = False) -> str:
    """Fixed-width multi-model report: coefficient (standard error) rows
    followed by the six diagnostic rows."""
    if not estimates:
        raise ValueError("no estimates to render")
    order = merged_coefficient_order(estimates, show_effects=show_effects)
    headers = [est.name or f"({i + 1})" for i, est in enumerate(estimates)]

    def coef_cell(est: GmmEstimate, name: str) -> str:
        if name not in est.names:
            return ""
        c, s = est.coef(name), est.se(name)
        star = "*" if s > 0 and abs(c / s) > 1.959964 else ""
        return f"{c:.4f}{star} ({s:.4f})"

    def prob_j_cell(est: GmmEstimate) -> str:
        if est.just_identified:
            return "—"
        return "0.00" if est.j_pvalue < 0.005 else f"{est.j_pvalue:.2f}"

    rows = [("", headers)]
    for name in order:
        rows.append((name, [coef_cell(est, name) for est in estimates]))
    rows.append(("Adjusted R-squared",
                 [f"{est.adjusted_r2:.2f}" for est in estimates]))
    rows.append(("Prob(J-statistic)", [prob_j_cell(est) for est in estimates]))
    rows.append(("Durbin-Watson stat",
                 [f"{est.durbin_watson:.2f}" for est in estimates]))
    rows.append(("Observations", [str(est.n_obs) for est in estimates]))
    rows.append(("Instruments", [str(est.n_instruments) for est in estimates]))
    rows.append(("Countries", [str(est.n_countries) for est in estimates]))

    label_width = max(len(label) for label, _ in rows)
    col_widths = [
        max(len(rows[r][1][c]) for r in range(len(rows)))
        for c in range(len(estimates))
    ]
    lines = []
    for label, cells in rows:
        padded = [cell.rjust(w + 2) for cell, w in zip(cells, col_widths)]
        lines.append(label.ljust(label_width) + "".join(padded))
    if any(est.just_identified for est in estimates):
        lines.append("— : just-identified model, no over-identification test")
    return "\n".join(lines) + "\n"


def estimates_to_json(estimates: list[GmmEstimate]) -> str:
    return json.dumps({"models": [est.to_json_dict() for est in estimates]},
                      indent=2, sort_keys=True)


class DynamicPanelGMM:
    """Estimator facade: configure with a :class:`GmmModelSpec`, call
    :meth:`fit` with a :class:`PanelDataset`, read the fitted attributes.

    Follows the scikit-learn parameter protocol (``get_params`` /
    ``set_params``) so model grids compose with standard tooling, even though
    the input is a panel dataset rather than a feature matrix.
    """

    def __init__(self, spec: GmmModelSpec):
        self.spec = spec

    def get_params(self, deep=True):
        return {"spec": self.spec}

    def set_params(self, **params):
        for key, value in params.items():
            if key != "spec":
                raise ValueError(f"unknown parameter {key!r}")
            self.spec = value
        return self

    def fit(self, dataset: PanelDataset, y=None):
        design = build_design(dataset, self.spec)
        instruments = build_instruments(dataset, self.spec, design)
        estimate = gmm_two_step(design, instruments)
        if self.spec.name:
            estimate = replace(estimate, name=self.spec.name)
        self.design_ = design
        self.instruments_ = instruments
        self.estimate_ = estimate
        self.coefficients_ = {
            n: float(c) for n, c in zip(estimate.names, estimate.coefficients)
        }
        self.std_errors_ = {
            n: float(s) for n, s in zip(estimate.names, estimate.std_errors)
        }
        return self
