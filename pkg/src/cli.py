"""Command-line interface for dmlworkbench."""
import json
import logging
import sys
from pathlib import Path
from typing import Any, NoReturn, Optional

import click
from dotenv import dotenv_values
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from src import __version__
from src.core.crossfit import CrossFitError, FoldPartitionError
from src.core.dataset import DatasetError, describe, load_csv, parse_role_flags, write_csv
from src.core.estimators import EstimationError, MissingTruthError
from src.core.moments import MomentModelError, describe_catalog
from src.core.pipeline import EstimationConfig, run_estimation
from src.simulation.designs import SimulationError, get_design
from src.simulation.runner import McDesign, ReplicationFailure, run_monte_carlo
from src.simulation.summary import write_summary_json
from src.smoothing.kernels import KernelError
from src.theory.advisor import advise_k
from src.theory.curves import TheoryParams, curve_table
from src.theory.rates import TheoryDomainError
from src.utils.config import get_config, setup_logging


logger = logging.getLogger(__name__)

console = Console()
err_console = Console(stderr=True)

EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3
EXIT_SIMULATION = 4

VALIDATION_ERRORS = (
    ValidationError,
    DatasetError,
    MomentModelError,
    FoldPartitionError,
    TheoryDomainError,
    SimulationError,
)
ESTIMATION_ERRORS = (EstimationError, CrossFitError, KernelError)

# keys written by --dump-config are the option names below, minus these
_NOT_DUMPED = {"config", "dump_config"}


def _fail(error: Exception, code: int) -> NoReturn:
    err_console.print(f"\n[bold red]✗ Error:[/bold red] {error}\n", style="red")
    sys.exit(code)


def _int_list(text: str) -> list[int]:
    """Parse '2,5,10' or '2-30' (inclusive) or a mix of both."""
    values: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        low, sep, high = part.partition("-")
        if sep:
            values.extend(range(int(low), int(high) + 1))
        else:
            values.append(int(part))
    return values


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _load_config_file(ctx: click.Context, param: click.Parameter, value: Optional[str]) -> None:
    """Apply a key=value file as option defaults; explicit flags still win."""
    if not value:
        return
    values = dotenv_values(value)
    known = {p.name: p for p in ctx.command.params if p.name}
    defaults: dict[str, Any] = {}
    for key, raw in values.items():
        name = key.strip().lower().replace("-", "_")
        if name not in known or name in _NOT_DUMPED:
            raise click.BadParameter(f"Unknown key '{key}' in {value}", param=param)
        if raw is None:
            continue
        option = known[name]
        defaults[name] = raw.split(",") if getattr(option, "multiple", False) else raw
    ctx.default_map = {**(ctx.default_map or {}), **defaults}
    logger.debug(f"Loaded {len(defaults)} option defaults from {value}")


def _format_value(value: Any) -> Optional[str]:
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value) if value else None
    return str(value)


def _dump_config(ctx: click.Context, path: Optional[Path]) -> None:
    if path is None:
        return
    lines = []
    for name in sorted(ctx.params):
        if name in _NOT_DUMPED:
            continue
        text = _format_value(ctx.params[name])
        if text is not None:
            lines.append(f"{name}={text}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote resolved config to {path}")


def config_options(func: Any) -> Any:
    """--config / --dump-config shared by every subcommand."""
    func = click.option(
        "--dump-config",
        type=click.Path(dir_okay=False, path_type=Path),
        help="Write the resolved options as key=value lines",
    )(func)
    func = click.option(
        "--config",
        type=click.Path(exists=True, dir_okay=False),
        callback=_load_config_file,
        is_eager=True,
        expose_value=False,
        help="key=value file of option defaults (flags win)",
    )(func)
    return func


def _write_text(text: str, out: Optional[Path]) -> None:
    if out is None:
        click.echo(text, nl=False)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    console.print(f"[bold green]✓ Wrote[/bold green] {out}")


def _header(command: str, params: dict[str, Any]) -> str:
    resolved = {k: v for k, v in params.items() if k not in _NOT_DUMPED}
    return f"# dmlworkbench {command}\n# config: {json.dumps(resolved, sort_keys=True, default=str)}\n"


@click.group()
@click.version_option(version=__version__)
@click.option("--log-level", default=None, help="Override DMLWB_LOG_LEVEL")
@click.option("--log-file", type=click.Path(path_type=Path), default=None, help="Also log to file")
def cli(log_level: Optional[str], log_file: Optional[Path]) -> None:
    """dmlworkbench - DML1/DML2 estimation, higher-order curves and Monte Carlo lab."""
    setup_logging(level=log_level, log_file=log_file)


@cli.command()
@click.argument("csv_path", required=False, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--role", "roles", multiple=True, help="role=column; defaults to columns named by role")
@click.option("--model", default=None, help="ATE, ATT_DID, LATE, WATE, ATT, PLM or PLM_IV")
@click.option("--method", type=click.Choice(["dml1", "dml2", "both"]), default="both", show_default=True)
@click.option("--oracle", is_flag=True, help="Add ORACLE1/ORACLE2 from truth_eta columns")
@click.option("--k", "k", type=int, default=5, show_default=True, help="Number of folds")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--kernel-order", type=click.Choice(["2", "4", "6"]), default="2", show_default=True)
@click.option("--c", "c", type=float, default=1.0, show_default=True, help="Bandwidth constant")
@click.option("--phi0", type=float, default=0.2, show_default=True, help="Bandwidth exponent")
@click.option("--seed", type=int, default=0, show_default=True, help="Fold assignment seed")
@click.option("--propensity-floor", type=float, default=None, help="Floor for inverse-probability fits")
@click.option("--weighted-dml1", is_flag=True, help="Weight fold solutions by fold size")
@click.option("--export-eta", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--list-models", is_flag=True, help="Print the moment catalog and exit")
@config_options
@click.pass_context
def estimate(
    ctx: click.Context,
    csv_path: Optional[Path],
    roles: tuple[str, ...],
    model: Optional[str],
    method: str,
    oracle: bool,
    k: int,
    alpha: float,
    kernel_order: str,
    c: float,
    phi0: float,
    seed: int,
    propensity_floor: Optional[float],
    weighted_dml1: bool,
    export_eta: Optional[Path],
    out: Optional[Path],
    list_models: bool,
    dump_config: Optional[Path],
) -> None:
    """Estimate theta with DML1 and/or DML2 on a CSV file."""
    if list_models:
        click.echo(json.dumps(describe_catalog(), indent=2))
        return
    try:
        if csv_path is None or model is None:
            raise click.UsageError("CSV_PATH and --model are required")
        config = EstimationConfig(
            model=model,
            method=method,  # type: ignore[arg-type]
            oracle=oracle,
            K=k,
            alpha=alpha,
            kernel_order=int(kernel_order),  # type: ignore[arg-type]
            c=c,
            phi0=phi0,
            seed=seed,
            propensity_floor=propensity_floor,
            weighted_dml1=weighted_dml1,
        )
        _dump_config(ctx, dump_config)
        role_map = parse_role_flags(roles) if roles else None
        dataset = load_csv(csv_path, role_map)
        run = run_estimation(dataset, config, export_eta=export_eta)
    except MissingTruthError as e:
        _fail(e, EXIT_VALIDATION)
    except VALIDATION_ERRORS as e:
        _fail(e, EXIT_VALIDATION)
    except ESTIMATION_ERRORS as e:
        _fail(e, EXIT_ESTIMATION)

    payload = run.to_payload(describe(dataset))
    _write_text(json.dumps(payload, indent=2) + "\n", out)


@cli.command()
@click.option("--design", type=click.Choice(["att-did", "late"], case_sensitive=False), required=True)
@click.option("--n", "n", type=int, default=1000, show_default=True)
@click.option("--reps", type=int, default=500, show_default=True)
@click.option("--k-grid", default="2,5,10,20", show_default=True)
@click.option("--c-grid", default=None, help="Bandwidth constants; design default when omitted")
@click.option("--kernel-order", type=click.Choice(["2", "4", "6"]), default=None)
@click.option("--phi0", type=float, default=None, help="Bandwidth exponent; design default when omitted")
@click.option("--methods", default="DML1,DML2,ORACLE1,ORACLE2", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--fold-seed", type=int, default=None, help="Separate master seed for fold assignment")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--propensity-floor", type=float, default=None)
@click.option("--threads", type=int, default=None, envvar="DMLWB_THREADS", help="Worker processes [env DMLWB_THREADS]")
@click.option("--strict", is_flag=True, help="Abort on the first failed replication cell")
@click.option(
    "--out",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Summary CSV [default: DMLWB_RESULTS_DIR/<design>_n<n>_seed<seed>.csv]",
)
@click.option("--json-out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@config_options
@click.pass_context
def simulate(
    ctx: click.Context,
    design: str,
    n: int,
    reps: int,
    k_grid: str,
    c_grid: Optional[str],
    kernel_order: Optional[str],
    phi0: Optional[float],
    methods: str,
    seed: int,
    fold_seed: Optional[int],
    alpha: float,
    propensity_floor: Optional[float],
    threads: Optional[int],
    strict: bool,
    out: Optional[Path],
    json_out: Optional[Path],
    dump_config: Optional[Path],
) -> None:
    """Run the Monte Carlo lab and write the long-format summary CSV."""
    try:
        mc_design = McDesign(
            name=design,
            n=n,
            reps=reps,
            K_grid=_int_list(k_grid),
            c_grid=_float_list(c_grid) if c_grid else None,
            kernel_order=int(kernel_order) if kernel_order else None,  # type: ignore[arg-type]
            phi0=phi0,
            methods=[m.strip().upper() for m in methods.split(",") if m.strip()],  # type: ignore[misc]
            seed=seed,
            fold_seed=fold_seed,
            alpha=alpha,
            propensity_floor=propensity_floor,
            strict=strict,
        )
        _dump_config(ctx, dump_config)
        workers = threads if threads is not None else get_config().threads
        if workers < 1:
            raise click.BadParameter(f"threads must be at least 1, got {workers}")
        with err_console.status(f"[bold yellow]Running {reps} replications of {mc_design.name}..."):
            summary = run_monte_carlo(mc_design, worker_count=workers)
    except ReplicationFailure as e:
        _fail(Exception(f"{e} [{e.cell}]"), EXIT_SIMULATION)
    except ValueError as e:
        # pydantic errors and bad list entries
        _fail(e, EXIT_VALIDATION)
    except VALIDATION_ERRORS as e:
        _fail(e, EXIT_VALIDATION)

    if out is None:
        out = get_config().results_dir / f"{mc_design.name.lower()}_n{n}_seed{seed}.csv"
    _write_text(summary.to_csv_text(), out)
    if json_out is not None:
        write_summary_json(summary, json_out)


@cli.command()
@click.option("--what", type=click.Choice(["ho-bias", "so-mse", "ho-var"]), required=True)
@click.option("--n", "n", type=int, default=1000, show_default=True)
@click.option("--k-grid", default="2-30", show_default=True, help="Fold counts; K = n is always added")
@click.option("--f-delta", type=float, default=0.0, show_default=True)
@click.option("--f-b", type=float, default=0.0, show_default=True)
@click.option("--g-delta", type=float, default=0.0, show_default=True)
@click.option("--g-b", type=float, default=0.0, show_default=True)
@click.option("--sigma2", type=float, default=1.0, show_default=True)
@click.option("--phi1", type=float, default=None)
@click.option("--phi2", type=float, default=None)
@click.option("--phi", type=float, default=None, help="Shorthand for phi1 = phi2 = phi")
@click.option("--phi0", type=float, default=None, help="Derive phi1, phi2 from the bandwidth exponent")
@click.option("--s", "s", type=int, default=None, help="Kernel order (with --phi0)")
@click.option("--dx", type=int, default=None, help="Covariate dimension (with --phi0)")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@config_options
@click.pass_context
def curves(
    ctx: click.Context,
    what: str,
    n: int,
    k_grid: str,
    f_delta: float,
    f_b: float,
    g_delta: float,
    g_b: float,
    sigma2: float,
    phi1: Optional[float],
    phi2: Optional[float],
    phi: Optional[float],
    phi0: Optional[float],
    s: Optional[int],
    dx: Optional[int],
    out: Optional[Path],
    dump_config: Optional[Path],
) -> None:
    """Tabulate a higher-order curve as (K, value) CSV.

    ho-bias is the sqrt(n)-scaled bias, ho-var the second variance term and so-mse is n times
    the second-order MSE.
    """
    try:
        if phi is not None:
            phi1 = phi1 if phi1 is not None else phi
            phi2 = phi2 if phi2 is not None else phi
        params = TheoryParams(
            F_delta=f_delta,
            F_b=f_b,
            G_delta=g_delta,
            G_b=g_b,
            sigma2=sigma2,
            phi1=phi1,
            phi2=phi2,
            phi0=phi0,
            s=s,
            d_x=dx,
        )
        _dump_config(ctx, dump_config)
        rows = curve_table(what, params, n, _int_list(k_grid))  # type: ignore[arg-type]
    except ValueError as e:
        _fail(e, EXIT_VALIDATION)

    lines = [_header("curves", ctx.params), "K,value\n"]
    lines.extend(f"{K},{value:.17g}\n" for K, value in rows)
    _write_text("".join(lines), out)


@cli.command("advise-k")
@click.option("--n", "n", type=int, required=True)
@click.option("--phi", type=float, default=None, help="Nuisance rate; range [1/4, 1/2] when omitted")
@click.option("--dx", type=int, default=None, help="Covariate dimension (with --s and --phi0)")
@click.option("--s", "s", type=int, default=None, help="Kernel order (with --dx and --phi0)")
@click.option("--phi0", type=float, default=None, help="Bandwidth exponent (with --dx and --s)")
@click.option("--k-candidates", default="2,5,10,20", show_default=True)
@click.option("--upsilon", type=float, default=None, help="G_b / sigma2 for the exact MSE loss")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@config_options
@click.pass_context
def advise_k_command(
    ctx: click.Context,
    n: int,
    phi: Optional[float],
    dx: Optional[int],
    s: Optional[int],
    phi0: Optional[float],
    k_candidates: str,
    upsilon: Optional[float],
    out: Optional[Path],
    dump_config: Optional[Path],
) -> None:
    """Relative losses of candidate fold counts against K = n."""
    try:
        rate_flags = (dx, s, phi0)
        if any(v is not None for v in rate_flags) and any(v is None for v in rate_flags):
            raise TheoryDomainError("--dx, --s and --phi0 must be given together")
        rates = (dx, s, phi0) if dx is not None else None
        advice = advise_k(n, _int_list(k_candidates), phi=phi, rates=rates, upsilon=upsilon)  # type: ignore[arg-type]
        _dump_config(ctx, dump_config)
    except ValueError as e:
        _fail(e, EXIT_VALIDATION)

    known_phi = advice.phi is not None
    title = f"n = {n}, " + (f"phi = {advice.phi:.4g}" if known_phi else "phi in [1/4, 1/2]")
    table = Table(title=title, show_header=True, header_style="bold magenta")
    table.add_column("K", justify="right")
    table.add_column("Bias loss", justify="right")
    table.add_column("SO-MSE loss bound", justify="right")
    if advice.upsilon is not None:
        table.add_column(f"SO-MSE loss (upsilon={advice.upsilon:g})", justify="right")

    def pct(low: float, high: float) -> str:
        if known_phi:
            return f"{100 * high:.4f}%"
        return f"{100 * low:.4f}% - {100 * high:.4f}%"

    for row in advice.rows:
        cells = [str(row.K), pct(row.bias_loss_low, row.bias_loss_high), pct(row.mse_bound_low, row.mse_bound_high)]
        if row.mse_loss is not None:
            cells.append(f"{100 * row.mse_loss:.4f}%")
        table.add_row(*cells)

    console.print(table)
    console.print(f"\n[bold green]Recommended K:[/bold green] {advice.recommended_K}")
    for note in advice.notes:
        console.print(f"[dim]{note}[/dim]")

    if out is not None:
        header = _header("advise-k", ctx.params)
        fields = ["K", "bias_loss_low", "bias_loss_high", "mse_bound_low", "mse_bound_high", "mse_loss"]
        lines = [header, ",".join(fields) + "\n"]
        for record in advice.to_records():
            values = ["" if record[f] is None else f"{record[f]:.17g}" if f != "K" else str(record[f]) for f in fields]
            lines.append(",".join(values) + "\n")
        _write_text("".join(lines), out)


@cli.command("gen-data")
@click.option("--design", type=click.Choice(["att-did", "late"], case_sensitive=False), required=True)
@click.option("--n", "n", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@config_options
@click.pass_context
def gen_data(
    ctx: click.Context, design: str, n: int, seed: int, out: Path, dump_config: Optional[Path]
) -> None:
    """Write one simulated dataset (with truth columns) as CSV."""
    try:
        spec = get_design(design)
        dataset = spec.generator(n, seed)
        _dump_config(ctx, dump_config)
    except VALIDATION_ERRORS as e:
        _fail(e, EXIT_VALIDATION)
    write_csv(dataset, out)
    console.print(
        f"[bold green]✓ Wrote[/bold green] {dataset.n_rows} rows of {spec.name} to {out} "
        f"[dim](model {spec.model_id}, theta0 = {spec.theta0})[/dim]"
    )


@cli.command()
def config() -> None:
    """Show current configuration."""
    cfg = get_config()

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Setting", style="cyan")
    table.add_column("Value")

    table.add_row("Threads", str(cfg.threads))
    table.add_row("Log Level", cfg.log_level)
    table.add_row("Log File", str(cfg.log_file) if cfg.log_file else "-")
    table.add_row("Results Dir", str(cfg.results_dir))
    table.add_row("Truth Draws", str(cfg.truth_draws))

    console.print(table)


def main() -> None:
    """Entry point for the CLI."""
    try:
        cli()
    except Exception as e:
        err_console.print(f"[red]Error: {e}[/red]")
        sys.exit(1)


if __name__ == "__main__":
    main()
