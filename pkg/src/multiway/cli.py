from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Sequence
import warnings

import typer
from rich.console import Console
from rich.markup import escape

from .config import Config, load_config
from .core import PipelineOptions, run_data_pipeline, run_pipeline, run_screening
from .errors import (
    MultiwayError,
    NumericalError,
    PipelineError,
    ProtectiveFactorWarning,
    UserError,
)
from .formats import (
    dump_coefficient_spec,
    parse_coefficient_spec,
    parse_covariance_spec,
    parse_data_table,
    parse_simulation_spec,
    write_data_table,
)
from .logs import configure_logging
from .report import ReportFormat, emit_report, tool_version
from .simulation import simulate_cohort
from .ui import StatusLine, fit_summary

EXIT_USER_ERROR = 1
EXIT_NUMERICAL_ERROR = 2


def _version_callback(value: bool) -> None:
    if not value:
        return
    typer.echo(tool_version())
    raise typer.Exit()


app = typer.Typer(
    add_completion=False,
    help="Multi-way additive and multiplicative interaction indices for binary risk factors.",
)


@app.callback(invoke_without_command=True)
def main(
    ctx: typer.Context,
    version: bool = typer.Option(
        False,
        "--version",
        help="Show version and exit.",
        callback=_version_callback,
        is_eager=True,
    ),
    log_level: str | None = typer.Option(
        None, "--log-level", help="Log level (DEBUG, INFO, WARNING, ERROR)."
    ),
) -> None:
    ctx.obj = {"log_level": log_level}
    if ctx.invoked_subcommand is not None:
        return
    typer.echo(ctx.get_help())
    raise typer.Exit(code=EXIT_USER_ERROR)


@app.command("analyze")
def analyze(
    ctx: typer.Context,
    coeffs: Path = typer.Option(..., "--coeffs", help="Coefficient document (json)."),
    cov: Path | None = typer.Option(None, "--cov", help="Covariance document (json)."),
    output_format: str | None = typer.Option(None, "--format", help="json or table."),
    tolerance: float | None = typer.Option(
        None, "--tolerance", help="Qualitative-screen epsilon."
    ),
    allow_missing_terms: bool | None = typer.Option(
        None,
        "--allow-missing-terms/--no-allow-missing-terms",
        help="Treat product terms absent from a non-saturated document as 0.",
    ),
    protective_policy: str | None = typer.Option(
        None, "--protective-policy", help="warn, error or ignore."
    ),
    ci_level: float | None = typer.Option(None, "--ci-level", help="Confidence level."),
) -> None:
    """Run the full interaction pipeline on a coefficient document."""
    with _command_errors():
        config = _load(
            ctx,
            output_format=output_format,
            tolerance=tolerance,
            allow_missing_terms=allow_missing_terms,
            protective_policy=protective_policy,
            ci_level=ci_level,
        )
        table, covariance = parse_coefficient_spec(
            _read_text(coeffs), allow_missing_terms=config.allow_missing_terms
        )
        if cov is not None:
            covariance = parse_covariance_spec(_read_text(cov), table)
        report = run_pipeline(table, PipelineOptions.from_config(config), covariance)
        typer.echo(emit_report(report, _format(config)), nl=False)


@app.command("fit")
def fit(
    ctx: typer.Context,
    data: Path = typer.Option(..., "--data", help="Comma-delimited data table."),
    factors: str = typer.Option(..., "--factors", help="Comma-separated factor columns."),
    outcome: str | None = typer.Option(None, "--outcome", help="Binary outcome column."),
    confounders: str = typer.Option(
        "", "--confounders", help="Comma-separated confounder columns."
    ),
    save_coeffs: Path | None = typer.Option(
        None, "--save-coeffs", help="Write the fitted coefficients and covariance here."
    ),
    output_format: str | None = typer.Option(None, "--format", help="json or table."),
    tolerance: float | None = typer.Option(
        None, "--tolerance", help="Qualitative-screen epsilon."
    ),
    protective_policy: str | None = typer.Option(
        None, "--protective-policy", help="warn, error or ignore."
    ),
    max_iterations: int | None = typer.Option(
        None, "--max-iterations", help="IRLS iteration cap."
    ),
) -> None:
    """Fit a saturated logistic model to raw data, then run the pipeline."""
    with _command_errors():
        config = _load(
            ctx,
            outcome=outcome,
            output_format=output_format,
            tolerance=tolerance,
            protective_policy=protective_policy,
            max_iterations=max_iterations,
        )
        table = parse_data_table(
            _read_text(data),
            factors=_split(factors),
            outcome=config.outcome,
            confounders=_split(confounders),
        )
        error_console = Console(stderr=True)
        with StatusLine(error_console, f"Fitting {table.n_rows} rows...") as status:
            report, result = run_data_pipeline(table, PipelineOptions.from_config(config))
            status.update("Fit complete.")
        error_console.print(fit_summary(result))
        if save_coeffs is not None:
            _write_text(save_coeffs, dump_coefficient_spec(result.coefficients, result.covariance))
        typer.echo(emit_report(report, _format(config)), nl=False)


@app.command("simulate")
def simulate(
    ctx: typer.Context,
    spec: Path = typer.Option(..., "--spec", help="Simulation document (json)."),
    out: Path = typer.Option(..., "--out", help="Where to write the cohort table."),
    seed: int | None = typer.Option(None, "--seed", help="Override the document seed."),
) -> None:
    """Draw a synthetic cohort from a known risk surface."""
    with _command_errors():
        _load(ctx)
        simulation = parse_simulation_spec(_read_text(spec), seed=seed)
        error_console = Console(stderr=True)
        with StatusLine(error_console, f"Simulating {simulation.size} subjects..."):
            cohort = simulate_cohort(simulation)
        _write_text(out, write_data_table(cohort))
        error_console.print(
            f"Wrote {cohort.n_rows} rows ({int(cohort.outcomes().sum())} events) to {out}",
            markup=False,
        )


@app.command("check")
def check(
    ctx: typer.Context,
    coeffs: Path = typer.Option(..., "--coeffs", help="Coefficient document (json)."),
    output_format: str | None = typer.Option(None, "--format", help="json or table."),
    tolerance: float | None = typer.Option(
        None, "--tolerance", help="Qualitative-screen epsilon."
    ),
    allow_missing_terms: bool | None = typer.Option(
        None, "--allow-missing-terms/--no-allow-missing-terms"
    ),
) -> None:
    """Orientation and qualitative-interaction screens only."""
    with _command_errors():
        config = _load(
            ctx,
            output_format=output_format,
            tolerance=tolerance,
            allow_missing_terms=allow_missing_terms,
        )
        table, covariance = parse_coefficient_spec(
            _read_text(coeffs), allow_missing_terms=config.allow_missing_terms
        )
        report = run_screening(table, PipelineOptions.from_config(config), covariance)
        typer.echo(emit_report(report, _format(config)), nl=False)


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    command = typer.main.get_command(app)
    try:
        result = command.main(
            args=list(argv) if argv is not None else None,
            prog_name="multiway",
            standalone_mode=False,
        )
    except Exception as exc:
        code = _click_exit_code(exc)
        if code is None:
            raise
        return code
    return result if isinstance(result, int) else 0


def _click_exit_code(exc: Exception) -> int | None:
    # typer may raise these from its own bundled copy of click, so match by class name.
    kinds = {cls.__name__ for cls in type(exc).__mro__}
    if "Exit" in kinds:
        return int(getattr(exc, "exit_code", 0))
    if "ClickException" in kinds:
        show = getattr(exc, "show", None)
        if callable(show):
            show()
        return EXIT_USER_ERROR
    if "Abort" in kinds:
        return EXIT_USER_ERROR
    return None


def main_entry() -> None:
    raise SystemExit(dispatch())


def exit_code_for(exc: MultiwayError) -> int:
    if isinstance(exc, PipelineError):
        return exit_code_for(exc.cause)
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL_ERROR
    return EXIT_USER_ERROR


@contextmanager
def _command_errors() -> Iterator[None]:
    error_console = Console(stderr=True)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ProtectiveFactorWarning)
            yield
        for warning in caught:
            message = escape(str(warning.message))
            error_console.print(f"[yellow]multiway warning:[/yellow] {message}")
    except MultiwayError as exc:
        error_console.print(f"[red]multiway error:[/red] {escape(str(exc))}")
        raise typer.Exit(code=exit_code_for(exc))


def _load(ctx: typer.Context, **overrides: object) -> Config:
    options = dict(ctx.obj or {})
    options.update(overrides)
    config = load_config(Path.cwd(), overrides=options)
    configure_logging(config.log_level)
    return config


def _format(config: Config) -> ReportFormat:
    return "json" if config.output_format == "json" else "table"


def _split(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UserError(f"Failed to read {path}: {exc}") from exc


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise UserError(f"Failed to write {path}: {exc}") from exc
