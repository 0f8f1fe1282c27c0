"""
Command-line front end.

    python cli.py synth --seed 42 --out e1.csv
    python cli.py validate e1.csv
    python cli.py sef e1.csv --out results/
    python cli.py test e1.csv e2.csv e3.csv --out results/

Every subcommand writes its artifacts with a provenance block; failures print
a JSON error report on stderr and exit with the error's status code.
"""

import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from diagnostics import cumulative_winner_share, load_synth_spec, make_synth_spec, generate_synthetic, write_cumulative_csv
from election_store import save_election
from errors import ElectionForensicsError, InvalidConfig
from ingest import ColumnMapping, summarize, summary_table, write_election_csv
from pipeline import PipelineSettings, compute_election_sef, load_any_election, run_ensemble
from riggingtest import default_p_grid, parse_p_grid, write_delta_csv, write_ensemble, write_test_report
from sef import cloud_summary, export_contour_grid, fingerprint_histogram, neighborhood_stats, smooth_histogram, write_zscores_csv
from utils import parse_structured_file, provenance, setup_logging, write_csv, write_json

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, no_args_is_help=True, help="Standardized election fingerprints and the voter-rigging test.")
console = Console()


class RunConfig(PipelineSettings):
    """Settings of one invocation; hashed into every provenance block."""

    subcommand: str
    inputs: Tuple[str, ...] = ()
    out: str = "."
    seed: int = 0

    def provenance(
        self,
        extra_inputs: Tuple[str, ...] = (),
        extra_settings: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        settings = self.model_dump(mode="json", exclude={"inputs", "out"})
        settings.update(extra_settings or {})
        return provenance(settings, self.inputs + extra_inputs)


@contextmanager
def _reported_errors():
    try:
        yield
    except ElectionForensicsError as e:
        typer.echo(json.dumps(e.to_dict(), sort_keys=True, default=str), err=True)
        raise typer.Exit(e.exit_code)


def _parse_range(text: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(part) for part in text.split(":"))
    except ValueError as e:
        raise InvalidConfig(f"range must look like lo:hi, got {text!r}") from e
    return lo, hi


def _column_mapping(path: Optional[Path]) -> ColumnMapping:
    if path is None:
        return ColumnMapping()
    try:
        return ColumnMapping.model_validate(parse_structured_file(str(path)))
    except ValidationError as e:
        raise InvalidConfig(f"Invalid column mapping in {path}: {e}") from e


def _config(subcommand: str, inputs: List[Path], out: Path, **fields) -> RunConfig:
    try:
        return RunConfig(subcommand=subcommand, inputs=tuple(str(p) for p in inputs), out=str(out), **fields)
    except ValidationError as e:
        raise InvalidConfig(f"Invalid settings: {e}", {"errors": e.errors(include_url=False)}) from e


def _out_path(config: RunConfig, filename: str) -> str:
    os.makedirs(config.out, exist_ok=True)
    return os.path.join(config.out, filename)


DelimiterOpt = typer.Option(",", "--delimiter", help="Field delimiter of input files.")
ColumnsOpt = typer.Option(None, "--columns", help="JSON/YAML file mapping logical columns to headers.")
OutDirOpt = typer.Option(Path("."), "--out", help="Output directory.")


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging.")):
    setup_logging(verbose)


@app.command()
def validate(
    input: Path = typer.Argument(..., help="Election file."),
    name: Optional[str] = typer.Option(None, "--name", help="Election name (default: file stem)."),
    out: Optional[Path] = typer.Option(None, "--out", help="Write the canonical election JSON here."),
    delimiter: str = DelimiterOpt,
    columns: Optional[Path] = ColumnsOpt,
):
    """Check a file against the inclusion criteria and report what was kept."""
    with _reported_errors():
        config = _config("validate", [input], out or Path("."), delimiter=delimiter, columns=_column_mapping(columns))
        e = load_any_election(str(input), config, name)
        s = summarize(e)
        console.print(
            f"[green]accepted[/green] {s.name}: N={s.N} units in {s.neighborhoods} neighborhoods, "
            f"{s.excluded_units} units excluded"
        )
        if out is not None:
            save_election(e, _out_path(config, f"{e.name}.election.json"), config.provenance())


@app.command("summarize")
def summarize_cmd(
    inputs: List[Path] = typer.Argument(..., help="One or more election files."),
    out: Optional[Path] = typer.Option(None, "--out", help="Write summary.json and summary.csv here."),
    delimiter: str = DelimiterOpt,
    columns: Optional[Path] = ColumnsOpt,
):
    """Per-election unit count and elector-size statistics."""
    with _reported_errors():
        config = _config("summarize", inputs, out or Path("."), delimiter=delimiter, columns=_column_mapping(columns))
        summaries = [summarize(load_any_election(str(p), config)) for p in inputs]

        table = Table(title="Elections")
        for col in ("election", "N", "mu_n", "sigma_n", "cv_n"):
            table.add_column(col, justify="left" if col == "election" else "right")
        rows = summary_table(summaries)
        for row in rows:
            table.add_row(row[0], str(row[1]), f"{row[2]:.1f}", f"{row[3]:.1f}", f"{row[4]:.3f}")
        console.print(table)

        if out is not None:
            prov = config.provenance()
            doc = {
                "elections": [
                    {
                        "name": s.name,
                        "N": s.N,
                        "mu_n": s.mu_n,
                        "sigma_n": s.sigma_n,
                        "cv_n": s.cv_n,
                        "neighborhoods": s.neighborhoods,
                        "excluded_units": s.excluded_units,
                    }
                    for s in summaries
                ]
            }
            write_json(_out_path(config, "summary.json"), doc, prov)
            write_csv(_out_path(config, "summary.csv"), ["name", "N", "mu_n", "sigma_n", "cv_n"], rows, prov)


@app.command()
def sef(
    input: Path = typer.Argument(..., help="Election file."),
    out: Path = OutDirOpt,
    name: Optional[str] = typer.Option(None, "--name"),
    inclusive_strata: bool = typer.Option(False, "--inclusive-strata", help="Include each unit in its own stratum statistics."),
    no_ellipse: bool = typer.Option(False, "--no-ellipse", help="Keep points outside the confidence ellipse."),
    confidence: float = typer.Option(0.95, "--confidence"),
    bins: int = typer.Option(100, "--bins"),
    value_range: str = typer.Option("-5:5", "--range", help="Histogram range lo:hi on both axes."),
    levels: int = typer.Option(10, "--levels"),
    split_p: Optional[float] = typer.Option(None, "--split-p", help="Also export small/large SEFs split at this percentile."),
    delimiter: str = DelimiterOpt,
    columns: Optional[Path] = ColumnsOpt,
):
    """Z-scores and the smoothed standardized fingerprint of one election."""
    with _reported_errors():
        config = _config(
            "sef", [input], out,
            leave_one_out=not inclusive_strata,
            ellipse=not no_ellipse,
            confidence=confidence,
            bins=bins,
            value_range=_parse_range(value_range),
            levels=levels,
            split_p=split_p,
            delimiter=delimiter,
            columns=_column_mapping(columns),
        )
        e = load_any_election(str(input), config, name)
        result = compute_election_sef(e, config)
        prov = config.provenance()

        write_zscores_csv(result.kept, _out_path(config, f"{e.name}.zscores.csv"), prov)
        write_zscores_csv(result.removed, _out_path(config, f"{e.name}.removed.csv"), prov)
        summary = cloud_summary(result.kept)
        doc: Dict[str, Any] = {
            "election": e.name,
            "units": len(e.units),
            "zscores": len(result.zscores),
            "kept": len(result.kept),
            "removed": len(result.removed),
            "skipped_units": list(result.zscores.skipped),
            "cloud": {
                "center": list(summary.center),
                "mean": list(summary.mean),
                "covariance": [list(r) for r in summary.covariance],
                "correlation": summary.correlation,
            },
            "sef": result.contour(config.levels),
            "fingerprint": export_contour_grid(smooth_histogram(fingerprint_histogram(e, config.bins)), config.levels),
            "neighborhoods": [
                {
                    "neighborhood_id": s.neighborhood_id,
                    "units": s.member_count,
                    "mu_t": s.mu_t,
                    "sigma_t": s.sigma_t,
                    "mu_vw": s.mu_vw,
                    "sigma_vw": s.sigma_vw,
                }
                for s in neighborhood_stats(e)
            ],
        }
        if result.split is not None:
            split = result.split
            doc["split"] = {
                "p": split.p,
                "threshold": split.threshold,
                "valid": split.valid,
                "small": export_contour_grid(split.small, config.levels),
                "large": export_contour_grid(split.large, config.levels),
                "centers": None if split.centers is None else {
                    "small": [split.centers.m_t_S, split.centers.m_vw_S],
                    "large": [split.centers.m_t_L, split.centers.m_vw_L],
                    "D": split.centers.D,
                    "upper_right": split.centers.upper_right,
                },
            }
        write_json(_out_path(config, f"{e.name}.sef.json"), doc, prov)
        console.print(f"{e.name}: kept {len(result.kept)} of {len(result.zscores)} points, SEF written to {config.out}")


@app.command("test")
def test_cmd(
    inputs: List[Path] = typer.Argument(..., help="At least three election or Z-score files."),
    out: Path = OutDirOpt,
    alpha: float = typer.Option(0.05, "--alpha"),
    inclusive_strata: bool = typer.Option(False, "--inclusive-strata"),
    no_ellipse: bool = typer.Option(False, "--no-ellipse"),
    p_grid: Optional[str] = typer.Option(None, "--p-grid", help="Percentile grid start:step:end."),
    jobs: int = typer.Option(1, "--jobs", min=1, help="Elections loaded in parallel."),
    delimiter: str = DelimiterOpt,
    columns: Optional[Path] = ColumnsOpt,
):
    """Multi-election rigging test: reference set, delta curves and verdicts."""
    with _reported_errors():
        config = _config(
            "test", inputs, out,
            alpha=alpha,
            leave_one_out=not inclusive_strata,
            ellipse=not no_ellipse,
            p_grid=parse_p_grid(p_grid) if p_grid else default_p_grid(),
            delimiter=delimiter,
            columns=_column_mapping(columns),
        )
        ensemble = run_ensemble([str(p) for p in inputs], config, jobs)
        prov = config.provenance()
        for report in ensemble.reports:
            write_test_report(report, _out_path(config, f"{report.election}.report.json"), prov)
        write_ensemble(ensemble, _out_path(config, "ensemble.json"), prov)
        write_delta_csv(ensemble, _out_path(config, "delta_curves.csv"), prov)

        table = Table(title=f"Rigging test (alpha={config.alpha:g})")
        table.add_column("election")
        table.add_column("reference set")
        table.add_column("verdict")
        for r in ensemble.reports:
            style = "red" if r.verdict == "consistent-with-rigging" else ""
            table.add_row(r.election, "yes" if r.in_reference_set else "no", f"[{style}]{r.verdict}[/{style}]" if style else r.verdict)
        console.print(table)


@app.command()
def cumulative(
    input: Path = typer.Argument(..., help="Election file."),
    out: Path = OutDirOpt,
    name: Optional[str] = typer.Option(None, "--name"),
    delimiter: str = DelimiterOpt,
    columns: Optional[Path] = ColumnsOpt,
):
    """Winner share accumulated over units in descending size order."""
    with _reported_errors():
        config = _config("cumulative", [input], out, delimiter=delimiter, columns=_column_mapping(columns))
        e = load_any_election(str(input), config, name)
        curve = cumulative_winner_share(e)
        write_cumulative_csv(curve, _out_path(config, f"{e.name}.cumulative.csv"), config.provenance())
        console.print(f"{e.name}: final winner share {curve.cum_vw[-1]:.2f}%")


@app.command()
def synth(
    out: Path = typer.Option(Path("synthetic.csv"), "--out", help="Election file to write."),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON/YAML synthetic election spec."),
    seed: Optional[int] = typer.Option(None, "--seed"),
    name: Optional[str] = typer.Option(None, "--name"),
    neighborhoods: Optional[int] = typer.Option(None, "--neighborhoods"),
    units: Optional[int] = typer.Option(None, "--units", help="Units per neighborhood."),
    rig_q: Optional[float] = typer.Option(None, "--rig-q", help="Rig units below this size percentile."),
    shift_t: Optional[float] = typer.Option(None, "--shift-t"),
    shift_vw: Optional[float] = typer.Option(None, "--shift-vw"),
    fraction: Optional[float] = typer.Option(None, "--fraction"),
    delimiter: str = DelimiterOpt,
):
    """Generate a synthetic election, clean or rigged, in the ingest file format."""
    with _reported_errors():
        overrides = {"seed": seed, "name": name, "n_neighborhoods": neighborhoods, "units_per_neighborhood": units}
        rigging = {
            k: v
            for k, v in {"size_percentile_q": rig_q, "shift_t": shift_t, "shift_vw": shift_vw, "fraction_affected": fraction}.items()
            if v is not None
        }
        if config_file is not None:
            spec = load_synth_spec(str(config_file), **overrides)
        else:
            spec = make_synth_spec(**{k: v for k, v in overrides.items() if v is not None})
        if rigging:
            base = spec.rigging.model_dump() if spec.rigging is not None else {}
            spec = make_synth_spec(**{**spec.model_dump(), "rigging": {**base, **rigging}})

        config = _config(
            "synth", [config_file] if config_file is not None else [], out.parent,
            seed=spec.seed,
            delimiter=delimiter,
        )
        e = generate_synthetic(spec)
        prov = config.provenance(extra_settings={"synth": spec.model_dump(mode="json")})
        if out.parent and str(out.parent) not in ("", "."):
            os.makedirs(out.parent, exist_ok=True)
        write_election_csv(e, str(out), delimiter=delimiter, prov=prov)
        state = "rigged" if spec.rigging is not None else "clean"
        console.print(f"{spec.name}: {len(e.units)} units in {len(e.neighborhoods)} neighborhoods ({state}) written to {out}")


if __name__ == "__main__":
    app()
