"""Exception hierarchy shared across the toolkit.

Three branches matter for exit-code mapping in the CLI: configuration and
input-data defects, numerical failures, and plain I/O problems (the latter
surface as ``OSError`` and are not wrapped).
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit-raised errors."""


class ConfigError(ToolkitError):
    """Invalid configuration, model spec, or request (user-fixable)."""


class DataFormatError(ToolkitError):
    """Malformed input data (CSV structure, keys, unparseable cells)."""


class NumericalError(ToolkitError):
    """A numerical precondition failed or an algorithm broke down."""


# --- data ingestion -------------------------------------------------------

class MissingColumn(DataFormatError):
    def __init__(self, name: str):
        super().__init__(f"required column {name!r} not found in header")
        self.name = name


class DuplicateKey(DataFormatError):
    def __init__(self, country: str, year: int):
        super().__init__(f"duplicate row for ({country!r}, {year})")
        self.country = country
        self.year = year


class UnparseableNumeric(DataFormatError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"row {row}: column {column!r} has unparseable value {value!r}")
        self.row = row
        self.column = column
        self.value = value


# --- panel transforms -----------------------------------------------------

class ZeroVariance(NumericalError):
    def __init__(self, symbol: str):
        super().__init__(f"variable {symbol!r} has zero sample variance")
        self.symbol = symbol


class InsufficientData(NumericalError):
    def __init__(self, symbol: str, count: int):
        super().__init__(f"variable {symbol!r} has only {count} non-missing values")
        self.symbol = symbol
        self.count = count


class NonPositiveArgument(NumericalError):
    def __init__(self, symbol: str, country: str, year: int, value: float):
        super().__init__(
            f"log argument not positive for {symbol!r} at ({country}, {year}): {value}"
        )
        self.symbol = symbol
        self.country = country
        self.year = year


class UnknownVariable(ConfigError):
    def __init__(self, symbol: str):
        super().__init__(f"unknown variable {symbol!r}")
        self.symbol = symbol


class LagTooLarge(ConfigError):
    def __init__(self, k: int, n_years: int):
        super().__init__(f"lag {k} not feasible with {n_years} years")
        self.k = k


# --- linear algebra / special functions -----------------------------------

class InsufficientObservations(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, what: str, iterations: int):
        super().__init__(f"{what} did not converge within {iterations} iterations")
        self.iterations = iterations


class NotPositiveDefinite(NumericalError):
    def __init__(self, pivot: int):
        super().__init__(f"matrix not positive definite (pivot {pivot})")
        self.pivot = pivot


class SingularMatrix(NumericalError):
    pass


class NotStandardized(NumericalError):
    def __init__(self, column: int, mean: float, sd: float):
        super().__init__(
            f"column {column} not standardized (mean={mean:.3g}, sd={sd:.3g})"
        )
        self.column = column


class DimensionMismatch(NumericalError):
    pass


# --- GMM ------------------------------------------------------------------

class EmptyDesign(NumericalError):
    pass


class CollinearColumns(NumericalError):
    def __init__(self, report: str):
        super().__init__(f"design matrix numerically singular: {report}")
        self.report = report


class OrderConditionViolated(NumericalError):
    def __init__(self, n_params: int, n_instruments: int):
        super().__init__(
            f"order condition violated: {n_instruments} instruments "
            f"for {n_params} parameters"
        )
        self.n_params = n_params
        self.n_instruments = n_instruments


class TooFewResiduals(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class InvalidSpec(ConfigError):
    pass
