"""Panel toolkit: PCA-based composite index construction and two-step
dynamic-panel GMM estimation over country-year data."""

from .econometrics import (
    DynamicPanelGMM,
    GmmEstimate,
    GmmModelSpec,
    InstrumentRecipe,
    adjusted_r2,
    build_design,
    build_instruments,
    durbin_watson,
    gmm_two_step,
    j_statistic,
    render_estimates_table,
)
from .multivariate import (
    IndexSeries,
    PcaModel,
    PrincipalComponentIndex,
    bartlett,
    build_index,
    kaiser_retained,
    kmo,
    orient_index,
    pca_fit,
    scores,
    varimax,
    varimax_criterion,
)
from .numerics import (
    EigenDecomposition,
    SymMatrix,
    chi2_cdf,
    chi2_sf,
    correlation_matrix,
    log_det,
    solve_spd,
    sym_eigen,
)
from .paneldata import (
    PanelDataset,
    ValidationReport,
    VariableDef,
    apply_polarity,
    fill_gaps,
    lag,
    load_panel_csv,
    shift_log,
    validate,
    with_variable,
    write_panel_csv,
    zscore,
)
from .synth import DgpSpec, simulate_panel

__version__ = "0.1.0"

__all__ = [
    "DgpSpec",
    "DynamicPanelGMM",
    "EigenDecomposition",
    "GmmEstimate",
    "GmmModelSpec",
    "IndexSeries",
    "InstrumentRecipe",
    "PanelDataset",
    "PcaModel",
    "PrincipalComponentIndex",
    "SymMatrix",
    "ValidationReport",
    "VariableDef",
    "adjusted_r2",
    "apply_polarity",
    "bartlett",
    "build_design",
    "build_index",
    "build_instruments",
    "chi2_cdf",
    "chi2_sf",
    "correlation_matrix",
    "durbin_watson",
    "fill_gaps",
    "gmm_two_step",
    "j_statistic",
    "kaiser_retained",
    "kmo",
    "lag",
    "load_panel_csv",
    "log_det",
    "orient_index",
    "pca_fit",
    "render_estimates_table",
    "scores",
    "shift_log",
    "simulate_panel",
    "solve_spd",
    "sym_eigen",
    "validate",
    "varimax",
    "varimax_criterion",
    "with_variable",
    "write_panel_csv",
    "zscore",
]
