"""Command-line front end: validate -> transform -> PCA/index -> GMM -> reports.

Subcommands: ``validate``, ``index``, ``gmm``, ``pipeline``, ``simulate``.
Configuration is a strict JSON document (unknown keys are errors; silent
typos in an econometric config are dangerous). Every command is
deterministic given its inputs, and ``pipeline`` writes a manifest with a
sha256 per emitted file so reruns can be diffed by hash.

Exit codes: 0 success, 1 validation/config failure, 2 numerical failure,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import econometrics as ec
from . import multivariate as mv
from . import paneldata as pnl
from . import synth
from .errors import ConfigError, DataFormatError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

ALL_FORMATS = ("csv", "json", "table")


# --- configuration ----------------------------------------------------------

def _check_keys(raw: dict, allowed: set[str], where: str) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


@dataclass
class PcaOptions:
    variables: list[str] | None = None
    retention: object = "kaiser"
    rotate: bool = True
    use_rotated_scores: bool = False
    weighting: str = "variance_share"
    anchor: str | None = None
    index_symbol: str = "INCL"


@dataclass
class PipelineConfig:
    input: str
    schema: list[pnl.VariableDef]
    gap_policy: str = "none"
    transforms: list[dict] = field(default_factory=list)
    pca: PcaOptions | None = None
    gmm: list[ec.GmmModelSpec] = field(default_factory=list)
    output_dir: str = "out"
    formats: tuple[str, ...] = ALL_FORMATS

    @property
    def symbols(self) -> list[str]:
        return [v.symbol for v in self.schema]


def _parse_variable(raw: dict, idx: int) -> pnl.VariableDef:
    _check_keys(raw, {"symbol", "description", "source_tag", "polarity"},
                f"variables[{idx}]")
    if "symbol" not in raw:
        raise ConfigError(f"variables[{idx}] is missing 'symbol'")
    try:
        return pnl.VariableDef(**raw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_pca(raw: dict) -> PcaOptions:
    _check_keys(raw, {"variables", "retention", "rotate", "use_rotated_scores",
                      "weighting", "anchor", "index_symbol"}, "pca")
    opts = PcaOptions(**raw)
    if opts.weighting not in mv.WEIGHTINGS:
        raise ConfigError(f"pca.weighting must be one of {mv.WEIGHTINGS}")
    if not (opts.retention == "kaiser" or isinstance(opts.retention, int)):
        raise ConfigError("pca.retention must be 'kaiser' or an integer")
    return opts


def _parse_gmm_block(raw: dict, idx: int) -> ec.GmmModelSpec:
    where = f"gmm[{idx}]"
    _check_keys(raw, {"name", "dependent", "controls", "determinants",
                      "lag_dependent", "effects", "intercept", "instruments"},
                where)
    if "dependent" not in raw:
        raise ConfigError(f"{where} is missing 'dependent'")
    recipe_raw = raw.get("instruments", {})
    _check_keys(recipe_raw, {"lags", "exogenous", "collapse",
                             "include_effects"}, f"{where}.instruments")
    lags = {sym: tuple(rng) for sym, rng in recipe_raw.get("lags", {}).items()}
    exogenous = recipe_raw.get("exogenous")
    recipe = ec.InstrumentRecipe(
        lags=lags,
        exogenous=None if exogenous is None else tuple(exogenous),
        collapse=recipe_raw.get("collapse", True),
        include_effects=recipe_raw.get("include_effects", True),
    )
    return ec.GmmModelSpec(
        dependent=raw["dependent"],
        controls=tuple(raw.get("controls", ())),
        determinants=tuple(raw.get("determinants", ())),
        lag_dependent=raw.get("lag_dependent", True),
        effects=raw.get("effects"),
        intercept=raw.get("intercept", True),
        recipe=recipe,
        name=raw.get("name", f"({idx + 1})"),
    )


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    _check_keys(raw, {"input", "variables", "gap_policy", "transforms", "pca",
                      "gmm", "output_dir", "formats"}, "config")
    for key in ("input", "variables"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")
    schema = [_parse_variable(v, i) for i, v in enumerate(raw["variables"])]
    config = PipelineConfig(
        input=raw["input"],
        schema=schema,
        gap_policy=raw.get("gap_policy", "none"),
        transforms=raw.get("transforms", []),
        pca=_parse_pca(raw["pca"]) if raw.get("pca") is not None else None,
        gmm=[_parse_gmm_block(b, i) for i, b in enumerate(raw.get("gmm", []))],
        output_dir=raw.get("output_dir", "out"),
        formats=tuple(raw.get("formats", ALL_FORMATS)),
    )
    _validate_config(config)
    return config


def _validate_config(config: PipelineConfig) -> None:
    if config.gap_policy not in ("none", "linear_interior"):
        raise ConfigError(f"unknown gap_policy {config.gap_policy!r}")
    for fmt in config.formats:
        if fmt not in ALL_FORMATS:
            raise ConfigError(f"unknown format {fmt!r}")
    known = set(config.symbols)
    for i, t in enumerate(config.transforms):
        _check_keys(t, {"op", "vars", "shift"}, f"transforms[{i}]")
        if t.get("op") not in ("zscore", "shift_log"):
            raise ConfigError(f"transforms[{i}].op must be zscore or shift_log")
        for sym in t.get("vars", []):
            if sym not in known:
                raise ConfigError(f"transforms[{i}] references unknown symbol {sym!r}")
    available = set(known)
    if config.pca is not None:
        for sym in config.pca.variables or []:
            if sym not in known:
                raise ConfigError(f"pca references unknown symbol {sym!r}")
        if config.pca.anchor is not None:
            pca_vars = config.pca.variables or config.symbols
            if config.pca.anchor not in pca_vars:
                raise ConfigError(
                    f"pca.anchor {config.pca.anchor!r} is not a pca variable"
                )
        available.add(config.pca.index_symbol)
    for i, spec in enumerate(config.gmm):
        referenced = [spec.dependent]
        for entry in spec.regressor_entries():
            referenced.extend(ec._interaction_factors(entry))
        referenced.extend(spec.recipe.lags)
        for sym in referenced:
            if sym not in available:
                raise ConfigError(f"gmm[{i}] references unknown symbol {sym!r}")
    if config.pca is None and not config.gmm:
        raise ConfigError("config requests no stage (neither pca nor gmm)")


# --- shared stages ----------------------------------------------------------

def _prepare_dataset(config: PipelineConfig) -> pnl.PanelDataset:
    ds = pnl.load_panel_csv(config.input, config.schema)
    ds = pnl.fill_gaps(ds, config.gap_policy)
    ds = pnl.apply_polarity(ds)
    for t in config.transforms:
        if t["op"] == "zscore":
            ds = pnl.zscore(ds, t["vars"])
        else:
            ds = pnl.shift_log(ds, t["vars"], t.get("shift", pnl.DEFAULT_LOG_SHIFT))
    return ds


def _fit_index(config: PipelineConfig, ds: pnl.PanelDataset):
    opts = config.pca
    symbols = opts.variables or config.symbols
    matrix, keys = ds.to_matrix(symbols)
    estimator = mv.PrincipalComponentIndex(
        retention=opts.retention,
        rotate=opts.rotate,
        use_rotated_scores=opts.use_rotated_scores,
        weighting=opts.weighting,
        anchor=opts.anchor,
        symbols=symbols,
    )
    estimator.fit(matrix)
    series = estimator.index(matrix, keys)
    schema = {v.symbol: v.polarity for v in config.schema}
    series.metadata["polarity"] = {s: schema[s] for s in symbols}
    return estimator, series


def _inject_index(ds: pnl.PanelDataset, series: mv.IndexSeries,
                  symbol: str) -> pnl.PanelDataset:
    grid = series.values.reshape(len(ds.countries), len(ds.years))
    var = pnl.VariableDef(symbol, "composite index", source_tag="generated")
    return pnl.with_variable(ds, var, grid)


# --- renderers --------------------------------------------------------------

def render_adequacy(model: mv.PcaModel) -> str:
    lines = ["Sampling adequacy"]
    if model.kmo is not None:
        lines.append(f"  KMO measure of sampling adequacy   {model.kmo.overall:.3f}")
    else:
        lines.append("  KMO measure of sampling adequacy   n/a (singular matrix)")
    if model.bartlett is not None:
        lines.append(f"  Bartlett sphericity chi-square     {model.bartlett.chi_square:.2f}")
        lines.append(f"  df                                 {model.bartlett.df}")
        lines.append(f"  sig.                               {model.bartlett.p_value:.3f}")
    else:
        lines.append("  Bartlett sphericity                n/a")
    return "\n".join(lines) + "\n"


def render_variance_table(model: mv.PcaModel) -> str:
    rows = model.variance_table()
    rotation = model.rotation_sums()
    header = (f"{'Comp':>4}  {'Total':>8} {'% of Var.':>9} {'Cumul %':>8}"
              f"  {'Extr.Total':>10} {'% of Var.':>9} {'Cumul %':>8}")
    if rotation is not None:
        header += f"  {'Rot.Total':>9} {'% of Var.':>9} {'Cumul %':>8}"
    lines = ["Total variance explained", header]
    for row in rows:
        k = row["component"]
        line = (f"{k:>4}  {row['total']:>8.3f} {row['pct_of_variance']:>9.3f} "
                f"{row['cumulative_pct']:>8.3f}")
        if k <= model.retained:
            line += (f"  {row['total']:>10.3f} {row['pct_of_variance']:>9.3f} "
                     f"{row['cumulative_pct']:>8.3f}")
            if rotation is not None:
                rot = rotation[k - 1]
                line += (f"  {rot['total']:>9.3f} {rot['pct_of_variance']:>9.3f} "
                         f"{rot['cumulative_pct']:>8.3f}")
        lines.append(line)
    return "\n".join(lines) + "\n"


def _write_country_means(series: mv.IndexSeries, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["country", "mean_inclusiveness"])
        for country, mean in series.per_country_means():
            writer.writerow([country, repr(mean)])


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


# --- commands ---------------------------------------------------------------

def cmd_validate(config: PipelineConfig, out_dir: Path | None,
                 fmt: str = "table") -> int:
    ds = pnl.load_panel_csv(config.input, config.schema)
    report = pnl.validate(ds)
    if fmt == "json":
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        status = "PASS" if report.passed else "FAIL"
        print(f"validation: {status}")
        for symbol in sorted(report.coverage):
            print(f"  {symbol}: coverage {report.coverage[symbol]:.3f} "
                  f"({report.missing_counts[symbol]} missing)")
        for defect in report.defects:
            print(f"  defect: {defect}")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "validation.json", report.to_json_dict())
    return EXIT_OK if report.passed else EXIT_CONFIG


def cmd_index(config: PipelineConfig, out_dir: Path,
              echo: bool = True, fmt: str = "table") -> list[Path]:
    if config.pca is None:
        raise ConfigError("config has no pca block")
    ds = _prepare_dataset(config)
    estimator, series = _fit_index(config, ds)
    model = estimator.model_
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if echo and fmt == "json":
        print(json.dumps(model.to_json_dict(), indent=2, sort_keys=True))
    if "json" in config.formats:
        path = out_dir / "pca_model.json"
        _write_json(path, model.to_json_dict())
        written.append(path)
    if "table" in config.formats:
        adequacy = render_adequacy(model)
        variance = render_variance_table(model)
        if echo and fmt != "json":
            print(adequacy)
            print(variance)
        path = out_dir / "adequacy.txt"
        _write_text(path, adequacy)
        written.append(path)
        path = out_dir / "variance.txt"
        _write_text(path, variance)
        written.append(path)
    if "csv" in config.formats:
        path = out_dir / "index.csv"
        series.to_csv(path)
        written.append(path)
        path = out_dir / "country_means.csv"
        _write_country_means(series, path)
        written.append(path)
    return written


def cmd_gmm(config: PipelineConfig, out_dir: Path,
            echo: bool = True, fmt: str = "table") -> list[Path]:
    if not config.gmm:
        raise ConfigError("config has no gmm blocks")
    ds = _prepare_dataset(config)
    if config.pca is not None:
        symbol = config.pca.index_symbol
        if symbol not in ds.symbols:
            _, series = _fit_index(config, ds)
            ds = _inject_index(ds, series, symbol)
    estimates = []
    for spec in config.gmm:
        estimator = ec.DynamicPanelGMM(spec).fit(ds)
        estimates.append(estimator.estimate_)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    table = ec.render_estimates_table(estimates)
    if echo:
        print(ec.estimates_to_json(estimates) if fmt == "json" else table)
    if "table" in config.formats:
        path = out_dir / "gmm_table.txt"
        _write_text(path, table)
        written.append(path)
    if "json" in config.formats:
        path = out_dir / "gmm_models.json"
        _write_text(path, ec.estimates_to_json(estimates) + "\n")
        written.append(path)
    return written


def cmd_pipeline(config: PipelineConfig, out_dir: Path) -> list[Path]:
    stage = "validate"
    try:
        ds = pnl.load_panel_csv(config.input, config.schema)
        report = pnl.validate(ds)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        if "json" in config.formats:
            path = out_dir / "validation.json"
            _write_json(path, report.to_json_dict())
            written.append(path)
        if not report.passed:
            raise ConfigError(f"validation failed: {'; '.join(report.defects)}")
        if config.pca is not None:
            stage = "index"
            written += cmd_index(config, out_dir, echo=False)
        if config.gmm:
            stage = "gmm"
            written += cmd_gmm(config, out_dir, echo=False)
        stage = "manifest"
        manifest = {
            "files": [
                {"path": p.name, "sha256": _sha256(p)}
                for p in sorted(written, key=lambda p: p.name)
            ]
        }
        manifest_path = out_dir / "manifest.json"
        _write_json(manifest_path, manifest)
        print(f"pipeline complete: {len(written)} artifacts in {out_dir}")
        return written + [manifest_path]
    except Exception:
        print(f"pipeline failed at stage {stage!r}", file=sys.stderr)
        raise


def cmd_simulate(spec_path: str, out_dir: Path, seed: int | None) -> None:
    spec = synth.DgpSpec.from_json(spec_path)
    if seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=seed)
    ds, truth = synth.simulate_panel(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    pnl.write_panel_csv(ds, out_dir / "panel.csv")
    _write_json(out_dir / "truth.json", truth)
    print(f"simulated {len(ds.countries)} countries x {len(ds.years)} years "
          f"(seed {spec.seed}) -> {out_dir}")


# --- entry point ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="inclpanel",
                     description="composite-index and panel-GMM pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="path to the JSON pipeline config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=ALL_FORMATS, default="table",
                       help="stdout format for reports")

    add_common(sub.add_parser("validate", help="check the input panel"))
    add_common(sub.add_parser("index", help="build the composite index"))
    add_common(sub.add_parser("gmm", help="estimate the GMM models"))
    add_common(sub.add_parser("pipeline", help="run every stage"))
    sim = sub.add_parser("simulate", help="generate a synthetic panel")
    sim.add_argument("spec", help="path to a DGP spec JSON file")
    sim.add_argument("--out", default="out", help="output directory")
    sim.add_argument("--seed", type=int, default=None,
                     help="override the seed in the DGP file")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate":
        cmd_simulate(args.spec, Path(args.out), args.seed)
        return EXIT_OK
    config = load_config(args.config)
    out_dir = Path(args.out) if args.out else Path(config.output_dir)
    if args.command == "validate":
        return cmd_validate(config, out_dir if args.out else None, args.format)
    if args.command == "index":
        cmd_index(config, out_dir, fmt=args.format)
        return EXIT_OK
    if args.command == "gmm":
        cmd_gmm(config, out_dir, fmt=args.format)
        return EXIT_OK
    cmd_pipeline(config, out_dir)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
