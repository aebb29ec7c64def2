"""Long-format country-year panel store and its transform operations.

A :class:`PanelDataset` is a dense country x year x variable array with an
explicit missing mask. The year axis is always contiguous, so lags and
differences are positional by calendar year, never by row index. All
operations are pure: they return new datasets and append a record to the
transform log.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DuplicateKey,
    InsufficientData,
    LagTooLarge,
    MissingColumn,
    NonPositiveArgument,
    UnknownVariable,
    UnparseableNumeric,
    ZeroVariance,
)

POLARITIES = ("as_is", "inverted")

DEFAULT_LOG_SHIFT = 4.0


@dataclass(frozen=True)
class VariableDef:
    """One panel variable: short symbol, free-text description, data source
    tag, and polarity (``inverted`` marks welfare "bads" to be sign-flipped
    before index construction)."""

    symbol: str
    description: str = ""
    source_tag: str = ""
    polarity: str = "as_is"

    def __post_init__(self):
        if not self.symbol:
            raise ValueError("variable symbol must be nonempty")
        if self.polarity not in POLARITIES:
            raise ValueError(f"polarity must be one of {POLARITIES}")


@dataclass(frozen=True)
class PanelDataset:
    countries: tuple[str, ...]
    years: tuple[int, ...]
    variables: tuple[VariableDef, ...]
    values: np.ndarray          # (n_countries, n_years, n_variables) float
    missing: np.ndarray         # same shape, True where no observation
    transform_log: tuple[dict, ...] = ()

    def __post_init__(self):
        years = self.years
        if any(b - a != 1 for a, b in zip(years, years[1:])):
            raise ValueError("years must be strictly increasing with step 1")
        symbols = [v.symbol for v in self.variables]
        if len(set(symbols)) != len(symbols):
            raise ValueError("variable symbols must be unique")
        shape = (len(self.countries), len(years), len(self.variables))
        if self.values.shape != shape or self.missing.shape != shape:
            raise ValueError(
                f"values/missing shape {self.values.shape} does not match "
                f"countries x years x variables {shape}"
            )

    @property
    def symbols(self) -> list[str]:
        return [v.symbol for v in self.variables]

    def var_index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise UnknownVariable(symbol) from None

    def series(self, symbol: str) -> np.ndarray:
        """Country x year grid for one variable, NaN where missing."""
        j = self.var_index(symbol)
        grid = self.values[:, :, j].copy()
        grid[self.missing[:, :, j]] = np.nan
        return grid

    def to_matrix(self, symbols: list[str]) -> tuple[np.ndarray, list[tuple[str, int]]]:
        """Flatten to an (n_countries * n_years) x p matrix with NaNs for
        missing cells, country-major, plus the (country, year) key per row."""
        cols = [self.series(s).reshape(-1) for s in symbols]
        keys = [(c, y) for c in self.countries for y in self.years]
        return np.column_stack(cols), keys

    def _with_log(self, op: str, vars: list[str], params: dict) -> tuple[dict, ...]:
        from datetime import datetime, timezone

        record = {
            "op": op,
            "vars": list(vars),
            "params": params,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        return self.transform_log + (record,)

    def transform_log_json(self) -> str:
        return json.dumps(list(self.transform_log), indent=2)


@dataclass(frozen=True)
class ValidationReport:
    missing_counts: dict[str, int]
    coverage: dict[str, float]
    constant_columns: list[str]
    empty_columns: list[str]
    duplicate_keys: list[tuple[str, int]]
    passed: bool

    @property
    def defects(self) -> list[str]:
        out = [f"constant column: {s}" for s in self.constant_columns]
        out += [f"no observations: {s}" for s in self.empty_columns]
        out += [f"duplicate key: {k}" for k in self.duplicate_keys]
        return out

    def to_json_dict(self) -> dict:
        return {
            "missing_counts": self.missing_counts,
            "coverage": self.coverage,
            "constant_columns": self.constant_columns,
            "empty_columns": self.empty_columns,
            "duplicate_keys": [list(k) for k in self.duplicate_keys],
            "passed": self.passed,
            "defects": self.defects,
        }


def _parse_cell(text: str) -> float:
    """Data cells that do not parse as a number count as missing."""
    text = text.strip()
    if not text:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        return math.nan
    return value if math.isfinite(value) else math.nan


def load_panel_csv(path, schema: list[VariableDef]) -> PanelDataset:
    """Read a long-format ``country,year,<symbol>...`` CSV into a dataset.

    Countries are sorted lexicographically; the year axis spans the observed
    [min, max] range with absent interior years present as all-missing rows.
    Empty or non-numeric data cells become missing; an unparseable ``year``
    is a hard error because it is part of the row key.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("country") from None
        header = [h.strip() for h in header]
        for required in ("country", "year", *[v.symbol for v in schema]):
            if required not in header:
                raise MissingColumn(required)
        c_col = header.index("country")
        y_col = header.index("year")
        v_cols = [header.index(v.symbol) for v in schema]

        rows: dict[tuple[str, int], list[float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            country = row[c_col].strip()
            try:
                year = int(row[y_col].strip())
            except ValueError:
                raise UnparseableNumeric(lineno, "year", row[y_col]) from None
            key = (country, year)
            if key in rows:
                raise DuplicateKey(country, year)
            rows[key] = [_parse_cell(row[j]) if j < len(row) else math.nan
                         for j in v_cols]

    if not rows:
        raise MissingColumn("no data rows found")
    countries = tuple(sorted({c for c, _ in rows}))
    y_min = min(y for _, y in rows)
    y_max = max(y for _, y in rows)
    years = tuple(range(y_min, y_max + 1))
    values = np.full((len(countries), len(years), len(schema)), np.nan)
    for (country, year), cells in rows.items():
        values[countries.index(country), year - y_min, :] = cells
    missing = np.isnan(values)
    values = np.where(missing, 0.0, values)
    return PanelDataset(countries, years, tuple(schema), values, missing)


def write_panel_csv(ds: PanelDataset, path) -> None:
    """Inverse of :func:`load_panel_csv`: full-precision floats, empty cells
    for missing."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["country", "year", *ds.symbols])
        for i, country in enumerate(ds.countries):
            for t, year in enumerate(ds.years):
                cells = [
                    "" if ds.missing[i, t, j] else repr(float(ds.values[i, t, j]))
                    for j in range(len(ds.variables))
                ]
                writer.writerow([country, year, *cells])


def validate(ds: PanelDataset) -> ValidationReport:
    """Coverage and defect report; never raises, carries its findings."""
    n_cells = len(ds.countries) * len(ds.years)
    missing_counts = {}
    coverage = {}
    constant = []
    empty = []
    for j, var in enumerate(ds.variables):
        miss = int(ds.missing[:, :, j].sum())
        missing_counts[var.symbol] = miss
        coverage[var.symbol] = 1.0 - miss / n_cells
        observed = ds.values[:, :, j][~ds.missing[:, :, j]]
        if observed.size == 0:
            empty.append(var.symbol)
        elif np.all(observed == observed[0]):
            constant.append(var.symbol)
    passed = not constant and not empty
    return ValidationReport(missing_counts, coverage, constant, empty, [], passed)


def fill_gaps(ds: PanelDataset, policy: str = "none") -> PanelDataset:
    """Gap handling: ``none`` is the identity, ``linear_interior`` linearly
    interpolates interior gaps within each country series (leading and
    trailing gaps stay missing)."""
    if policy not in ("none", "linear_interior"):
        raise ValueError(f"unknown gap policy {policy!r}")
    if policy == "none":
        return replace(ds, transform_log=ds._with_log("fill_gaps", ds.symbols,
                                                      {"policy": "none"}))
    values = ds.values.copy()
    missing = ds.missing.copy()
    t_axis = np.arange(len(ds.years))
    for i in range(len(ds.countries)):
        for j in range(len(ds.variables)):
            miss = missing[i, :, j]
            obs = np.nonzero(~miss)[0]
            if obs.size < 2:
                continue
            interior = (t_axis > obs[0]) & (t_axis < obs[-1]) & miss
            if interior.any():
                values[i, interior, j] = np.interp(
                    t_axis[interior], obs, values[i, obs, j]
                )
                missing[i, interior, j] = False
    return PanelDataset(
        ds.countries, ds.years, ds.variables, values, missing,
        ds._with_log("fill_gaps", ds.symbols, {"policy": "linear_interior"}),
    )


def zscore(ds: PanelDataset, vars: list[str]) -> PanelDataset:
    """Standardize each named variable to mean 0, sample sd 1 (n-1
    denominator), pooled over all non-missing country-year cells."""
    values = ds.values.copy()
    for symbol in vars:
        j = ds.var_index(symbol)
        mask = ~ds.missing[:, :, j]
        obs = values[:, :, j][mask]
        if obs.size < 2:
            raise InsufficientData(symbol, int(obs.size))
        sd = float(obs.std(ddof=1))
        if sd == 0.0:
            raise ZeroVariance(symbol)
        grid = values[:, :, j]
        grid[mask] = (obs - float(obs.mean())) / sd
    return PanelDataset(
        ds.countries, ds.years, ds.variables, values, ds.missing.copy(),
        ds._with_log("zscore", list(vars), {}),
    )


def shift_log(ds: PanelDataset, vars: list[str],
              shift: float = DEFAULT_LOG_SHIFT) -> PanelDataset:
    """Map each cell x to ln(x + shift); the default shift of 4 keeps
    standardized data strictly positive in practice."""
    if shift <= 0:
        raise ValueError("shift must be positive")
    values = ds.values.copy()
    for symbol in vars:
        j = ds.var_index(symbol)
        mask = ~ds.missing[:, :, j]
        shifted = values[:, :, j] + shift
        bad = mask & (shifted <= 0.0)
        if bad.any():
            i, t = np.argwhere(bad)[0]
            raise NonPositiveArgument(
                symbol, ds.countries[i], ds.years[t], float(values[i, t, j])
            )
        grid = values[:, :, j]
        grid[mask] = np.log(shifted[mask])
    return PanelDataset(
        ds.countries, ds.years, ds.variables, values, ds.missing.copy(),
        ds._with_log("shift_log", list(vars), {"shift": shift}),
    )


def lag(ds: PanelDataset, var: str, k: int) -> PanelDataset:
    """Append ``<var>_L<k>`` holding the value k calendar years earlier; the
    first k years of every country are missing for the new variable."""
    if k < 1:
        raise ValueError("lag order must be a positive integer")
    j = ds.var_index(var)
    if k >= len(ds.years):
        raise LagTooLarge(k, len(ds.years))
    nc, ny, nv = ds.values.shape
    values = np.concatenate([ds.values, np.zeros((nc, ny, 1))], axis=2)
    missing = np.concatenate([ds.missing, np.ones((nc, ny, 1), dtype=bool)],
                             axis=2)
    values[:, k:, nv] = ds.values[:, :-k, j]
    missing[:, k:, nv] = ds.missing[:, :-k, j]
    lagged = VariableDef(
        symbol=f"{var}_L{k}",
        description=f"{var} lagged {k} years",
        source_tag=ds.variables[j].source_tag,
    )
    return PanelDataset(
        ds.countries, ds.years, ds.variables + (lagged,), values, missing,
        ds._with_log("lag", [var], {"k": k}),
    )


def with_variable(ds: PanelDataset, var: VariableDef,
                  grid: np.ndarray) -> PanelDataset:
    """Append a variable from a country x year grid (NaN marks missing)."""
    nc, ny, _ = ds.values.shape
    if grid.shape != (nc, ny):
        raise ValueError(f"grid shape {grid.shape} does not match {(nc, ny)}")
    miss = np.isnan(grid)[:, :, None]
    vals = np.where(miss[:, :, 0], 0.0, grid)[:, :, None]
    return PanelDataset(
        ds.countries, ds.years, ds.variables + (var,),
        np.concatenate([ds.values, vals], axis=2),
        np.concatenate([ds.missing, miss], axis=2),
        ds._with_log("add_variable", [var.symbol], {}),
    )


def apply_polarity(ds: PanelDataset) -> PanelDataset:
    """Multiply every ``inverted`` variable by -1 so that greater is always
    better before index construction."""
    flipped = [v.symbol for v in ds.variables if v.polarity == "inverted"]
    if not flipped:
        return ds
    values = ds.values.copy()
    for symbol in flipped:
        j = ds.var_index(symbol)
        mask = ~ds.missing[:, :, j]
        grid = values[:, :, j]
        grid[mask] = -grid[mask]
    return PanelDataset(
        ds.countries, ds.years, ds.variables, values, ds.missing.copy(),
        ds._with_log("apply_polarity", flipped, {}),
    )
