import csv
import platform
from collections import Counter, defaultdict
from datetime import datetime
from importlib.metadata import PackageNotFoundError, version
from logging import getLogger
from pathlib import Path
from typing import TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from src.common import exceptions
from src.common.seeding import GENERATOR_NAME
from src.experiments.schema import (
    TABLE_METRICS,
    Checkpoint,
    ResultsBundle,
    RoundRow,
    RunMetadata,
    SummaryRow,
    run_scale,
)
from src.simulation.models import ExperimentResult
from src.strategies.models import StrategyKind

logger = getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

ROUNDS_FILE = "rounds.csv"
SUMMARY_FILE = "summary.csv"
TABLE_FILE = "table.csv"
RUN_FILE = "run.json"
PARTITION_FILE = "partition.csv"
CHECKPOINT_FILE = "checkpoint.json"


def package_version() -> str:
    try:
        return version("fedbench")
    except PackageNotFoundError:
        return "0.0.0+local"


def build_bundle(result: ExperimentResult, started_at: datetime, finished_at: datetime) -> ResultsBundle:
    """Assemble the run.json content for a finished or aborted run."""
    cfg = result.config
    rows = [RoundRow.from_metrics(cfg, metrics) for metrics in result.rounds]
    return ResultsBundle(
        config=cfg,
        rounds=result.rounds,
        summary=SummaryRow.from_rows(rows) if rows else None,
        class_counts=result.class_counts,
        metadata=RunMetadata(
            package_version=package_version(),
            python_version=platform.python_version(),
            numpy_version=np.__version__,
            generator=GENERATOR_NAME,
            master_seed=cfg.master_seed,
            partition_seed=cfg.partition.seed,
            train_subset=cfg.train_subset,
            eval_subset=cfg.eval_subset,
            label_skew=result.label_skew,
            started_at=started_at,
            finished_at=finished_at,
            status=result.status,
            error=result.error,
        ),
    )


def _format(value: object) -> object:
    # repr keeps floats exact so reruns produce byte-identical files
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else value


class ResultsPersistenceManager:
    """Reads and writes the result files of an output directory."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self._create_directory()

    def _create_directory(self) -> bool:
        """
        Checks whether the output directory exists, and creates it if necessary

        :return: True if directory was created, False otherwise.
        """
        if self.directory.exists():
            return False
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as err:
            msg = f"Cannot create output directory {self.directory}: {err}"
            logger.error(msg)
            raise exceptions.ResultsWriteError(msg) from err
        return True

    def run_directory(self, run_id: str) -> Path:
        return self.directory / run_id

    def _write_csv(self, path: Path, model: type[BaseModel], rows: list[BaseModel]) -> None:
        logger.debug(f"Writing {len(rows)} rows to {path}")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", newline="") as file:
                writer = csv.DictWriter(file, fieldnames=list(model.model_fields))
                writer.writeheader()
                for row in rows:
                    writer.writerow({key: _format(value) for key, value in row.model_dump().items()})
        except OSError as err:
            msg = f"Cannot write {path}: {err}"
            logger.error(msg)
            raise exceptions.ResultsWriteError(msg) from err

    def _write_text(self, path: Path, content: str) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content)
        except OSError as err:
            msg = f"Cannot write {path}: {err}"
            logger.error(msg)
            raise exceptions.ResultsWriteError(msg) from err

    def save_run(self, result: ExperimentResult, bundle: ResultsBundle) -> Path:
        """Write the per-run files of one run and return its directory."""
        cfg = result.config
        run_dir = self.run_directory(cfg.run_id)
        logger.debug(f"Saving run {cfg.run_id} to {run_dir}")

        rows = [RoundRow.from_metrics(cfg, metrics) for metrics in result.rounds]
        self._write_csv(run_dir / ROUNDS_FILE, RoundRow, rows)
        self._write_text(run_dir / RUN_FILE, bundle.model_dump_json(indent=2))
        self._write_partition(run_dir / PARTITION_FILE, result.class_counts)

        if result.final_params is not None and result.strategy_state is not None:
            checkpoint = Checkpoint(
                run_id=cfg.run_id,
                round=len(result.rounds),
                params=result.final_params,
                strategy_state=result.strategy_state,
            )
            self._write_text(run_dir / CHECKPOINT_FILE, checkpoint.model_dump_json())

        logger.debug(f"Run {cfg.run_id} saved")
        return run_dir

    def _write_partition(self, path: Path, counts: list[list[int]]) -> None:
        num_classes = len(counts[0]) if counts else 0
        try:
            with path.open("w", newline="") as file:
                writer = csv.writer(file)
                writer.writerow(["client", *(f"class_{label}" for label in range(num_classes))])
                for client, row in enumerate(counts):
                    writer.writerow([client, *row])
        except OSError as err:
            msg = f"Cannot write {path}: {err}"
            logger.error(msg)
            raise exceptions.ResultsWriteError(msg) from err

    def load_round_rows(self) -> list[RoundRow]:
        """Collect rows from every per-run rounds.csv below the output directory."""
        rows = []
        for path in sorted(self.directory.glob(f"*/{ROUNDS_FILE}")):
            with path.open(newline="") as file:
                rows.extend(RoundRow.model_validate(record) for record in csv.DictReader(file))
        logger.debug(f"Loaded {len(rows)} round rows from {self.directory}")
        return rows

    def _read_json(self, path: Path, model: type[ModelT]) -> ModelT:
        try:
            return model.model_validate_json(path.read_text())
        except (OSError, ValidationError) as err:
            msg = f"Cannot read {path}: {err}"
            logger.error(msg)
            raise exceptions.ResultsReadError(msg) from err

    def load_bundle(self, run_id: str) -> ResultsBundle:
        return self._read_json(self.run_directory(run_id) / RUN_FILE, ResultsBundle)

    def load_checkpoint(self, run_id: str) -> Checkpoint:
        return self._read_json(self.run_directory(run_id) / CHECKPOINT_FILE, Checkpoint)

    def load_result(self, run_id: str) -> ExperimentResult | None:
        """
        Rebuild the stored state of a run from its run.json and checkpoint.json.

        Returns None when the run has not been written yet or left no checkpoint behind.
        """
        run_dir = self.run_directory(run_id)
        if not (run_dir / RUN_FILE).exists() or not (run_dir / CHECKPOINT_FILE).exists():
            return None
        bundle = self.load_bundle(run_id)
        checkpoint = self.load_checkpoint(run_id)
        return ExperimentResult(
            config=bundle.config,
            rounds=bundle.rounds[: checkpoint.round],
            final_params=checkpoint.params,
            strategy_state=checkpoint.strategy_state,
            class_counts=bundle.class_counts,
            label_skew=bundle.metadata.label_skew,
            status=bundle.metadata.status,
            error=bundle.metadata.error,
        )

    def summarize(self) -> list[SummaryRow]:
        """Rebuild the top-level rounds.csv, summary.csv and table.csv from the per-run files."""
        rows = self.load_round_rows()
        by_run: dict[str, list[RoundRow]] = defaultdict(list)
        for row in rows:
            by_run[row.run_id].append(row)

        summaries = [SummaryRow.from_rows(run_rows) for run_rows in by_run.values()]
        means = replicate_means(summaries)
        replicates = Counter(summary.group_id for summary in summaries)
        summary_rows = summaries + [mean for mean in means if replicates[mean.run_id] > 1]

        self._write_csv(self.directory / ROUNDS_FILE, RoundRow, rows)
        self._write_csv(self.directory / SUMMARY_FILE, SummaryRow, summary_rows)
        self._write_table(self.directory / TABLE_FILE, means)
        logger.info(f"Summarized {len(summaries)} runs into {self.directory / SUMMARY_FILE}")
        return summary_rows

    def _write_table(self, path: Path, means: list[SummaryRow]) -> None:
        header, table = build_table(means)
        try:
            with path.open("w", newline="") as file:
                writer = csv.writer(file)
                writer.writerow(header)
                writer.writerows([[_format(value) for value in line] for line in table])
        except OSError as err:
            msg = f"Cannot write {path}: {err}"
            logger.error(msg)
            raise exceptions.ResultsWriteError(msg) from err


def replicate_means(summaries: list[SummaryRow]) -> list[SummaryRow]:
    """One mean row per run group, over the per-replicate rows of ``summaries``."""
    groups: dict[str, list[SummaryRow]] = defaultdict(list)
    for summary in summaries:
        if summary.replicate != "mean":
            groups[summary.group_id].append(summary)
    return [SummaryRow.mean_of(run_group, members) for run_group, members in groups.items()]


def partition_label(summary: SummaryRow, with_scale: bool = False) -> str:
    label = f"{summary.dataset}/{summary.partition_mode}"
    if summary.alpha is not None:
        label += f"(alpha={summary.alpha:g})"
    if with_scale:
        label += f" {run_scale(summary.run_id)}"
    return label


def build_table(means: list[SummaryRow]) -> tuple[list[str], list[list[object]]]:
    """
    Pivot replicate means into rows (strategy, metric) by columns dataset/partition.

    Columns also name the client and round counts once the runs span more than one of them.
    """
    with_scale = len({run_scale(summary.run_id) for summary in means}) > 1
    columns = sorted({partition_label(summary, with_scale) for summary in means})
    cells = {(summary.strategy, partition_label(summary, with_scale)): summary for summary in means}
    order = [kind.value for kind in StrategyKind]
    strategies = sorted(
        {summary.strategy for summary in means},
        key=lambda kind: (order.index(kind), kind) if kind in order else (len(order), kind),
    )

    table = []
    for strategy in strategies:
        for metric in TABLE_METRICS:
            line: list[object] = [strategy, metric]
            for column in columns:
                summary = cells.get((strategy, column))
                line.append(getattr(summary, metric) if summary is not None else None)
            table.append(line)
    return ["strategy", "metric", *columns], table


def write_results(
    result: ExperimentResult, out_dir: Path, started_at: datetime, finished_at: datetime, summarize: bool = True
) -> ResultsBundle:
    """Write a run's files into ``out_dir``, refreshing the directory's summary files unless told not to."""
    bundle = build_bundle(result, started_at, finished_at)
    manager = ResultsPersistenceManager(out_dir)
    manager.save_run(result, bundle)
    if summarize:
        manager.summarize()
    return bundle
