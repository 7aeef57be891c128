from concurrent.futures import ProcessPoolExecutor
from functools import partial
from datetime import datetime, timezone
from logging import getLogger
from pathlib import Path
from typing import Annotated

import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from src.common import exceptions
from src.experiments.config import parse_config
from src.experiments.persistence import ResultsPersistenceManager, build_table, replicate_means, write_results
from src.experiments.schema import SummaryRow
from src.simulation.models import ExperimentConfig, ExperimentResult
from src.simulation.runner import run_experiment

logger = getLogger(__name__)

EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2

console = Console()

ConfigOption = Annotated[Path, typer.Option("--config", "-c", help="INI experiment configuration")]
DataDirOption = Annotated[
    Path | None,
    typer.Option("--data-dir", envvar="FEDBENCH_DATA_DIR", file_okay=False, help="Directory holding <dataset>/ files"),
]


def execute_run(cfg: ExperimentConfig, out_dir: Path, resume: bool = False) -> tuple[str, str]:
    """
    Run one experiment and write its per-run files. Returns (run_id, status).

    The per-run files are rewritten after every round, so an interrupted run leaves a checkpoint of
    its last completed round. With ``resume`` a finished run is skipped and any other stored run
    continues from its checkpoint. A numerically failed run still writes the rounds it completed
    and reports status ``aborted``. Configuration and ingestion errors propagate before anything
    is written.
    """
    previous = ResultsPersistenceManager(out_dir).load_result(cfg.run_id) if resume else None
    if previous is not None and previous.is_finished:
        logger.info(f"Run {cfg.run_id} already finished, skipping")
        return cfg.run_id, previous.status

    started_at = datetime.now(timezone.utc)

    def save(result: ExperimentResult) -> None:
        write_results(result, out_dir, started_at, datetime.now(timezone.utc), summarize=False)

    try:
        result = run_experiment(cfg, on_round=save, resume_from=previous)
    except exceptions.RunAborted as err:
        if err.partial is None:
            raise
        result = err.partial
    save(result)
    return cfg.run_id, result.status


def _with_data_dir(configs: list[ExperimentConfig], data_dir: Path | None) -> list[ExperimentConfig]:
    if data_dir is None:
        return configs
    return [cfg if cfg.data_dir is not None else cfg.model_copy(update={"data_dir": data_dir}) for cfg in configs]


def _load_configs(config: Path, replicas: int, seed: int | None, data_dir: Path | None) -> list[ExperimentConfig]:
    try:
        configs = parse_config(config, replicas=replicas, master_seed=seed)
    except exceptions.ConfigurationError as err:
        console.print(f"[red]Invalid configuration:[/red] {escape(str(err))}")
        raise typer.Exit(code=EXIT_CONFIG_ERROR)
    return _with_data_dir(configs, data_dir)


def print_table(summaries: list[SummaryRow]) -> None:
    header, lines = build_table(replicate_means(summaries))

    table = Table(title="Aggregation strategies", show_lines=False)
    for column in header:
        table.add_column(column, justify="left" if column in ("strategy", "metric") else "right")
    for line in lines:
        table.add_row(*(f"{cell:.4g}" if isinstance(cell, float) else str(cell or "-") for cell in line))
    console.print(table)


def run(
    config: ConfigOption,
    out: Annotated[Path, typer.Option("--out", "-o", file_okay=False, help="Output directory for results")],
    replicas: Annotated[int, typer.Option(min=1, help="Repeat every run with derived seeds")] = 1,
    jobs: Annotated[int, typer.Option(min=1, help="Runs executed in parallel")] = 1,
    seed: Annotated[int | None, typer.Option(min=0, help="Override the master seed of every run")] = None,
    data_dir: DataDirOption = None,
    resume: Annotated[bool, typer.Option(help="Skip finished runs and continue others from their checkpoints")] = False,
):
    """Execute every run of a configuration grid and write its results."""
    configs = _load_configs(config, replicas, seed, data_dir)
    logger.info(f"Executing {len(configs)} runs into {out} with {jobs} jobs")

    statuses: dict[str, str] = {}
    try:
        ResultsPersistenceManager(out)
        if jobs == 1:
            for cfg in configs:
                run_id, status = execute_run(cfg, out, resume)
                statuses[run_id] = status
        else:
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                for run_id, status in executor.map(partial(execute_run, out_dir=out, resume=resume), configs):
                    statuses[run_id] = status
    except (exceptions.ConfigurationError, exceptions.IngestionError) as err:
        console.print(f"[red]Cannot start run:[/red] {escape(str(err))}")
        raise typer.Exit(code=EXIT_CONFIG_ERROR)
    except exceptions.FedbenchError as err:
        console.print(f"[red]Run failed:[/red] {escape(str(err))}")
        raise typer.Exit(code=EXIT_RUNTIME_ERROR)
    finally:
        if statuses:
            summaries = ResultsPersistenceManager(out).summarize()
            print_table(summaries)

    aborted = sorted(run_id for run_id, status in statuses.items() if status == "aborted")
    if aborted:
        console.print(f"[red]Aborted runs:[/red] {', '.join(aborted)}")
        raise typer.Exit(code=EXIT_RUNTIME_ERROR)
    console.print(f"[green]Wrote {len(statuses)} runs to {out}[/green]")


def validate(config: ConfigOption, replicas: Annotated[int, typer.Option(min=1)] = 1):
    """Parse a configuration and list the runs it expands to."""
    configs = _load_configs(config, replicas, None, None)
    for cfg in configs:
        console.print(cfg.run_id)
    console.print(f"[green]{len(configs)} runs OK[/green]")


def summarize(directory: Annotated[Path, typer.Argument(exists=True, file_okay=False, help="Results directory")]):
    """Rebuild rounds.csv, summary.csv and table.csv from the per-run files of a results directory."""
    try:
        summaries = ResultsPersistenceManager(directory).summarize()
    except exceptions.ResultsWriteError as err:
        console.print(f"[red]{escape(str(err))}[/red]")
        raise typer.Exit(code=EXIT_RUNTIME_ERROR)
    if not summaries:
        console.print(f"[yellow]No runs found in {directory}[/yellow]")
        return
    print_table(summaries)
