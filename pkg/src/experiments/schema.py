import re
from datetime import datetime
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.common.schema import ArrayModel, FloatVector
from src.simulation.models import ExperimentConfig, RoundMetrics
from src.strategies.models import StrategyState

TABLE_METRICS = ("acc", "loss", "agg_time_s", "train_time_s", "comm_time_s")

REPLICATE_SUFFIX = re.compile(r"-r\d+$")
SCALE_PATTERN = re.compile(r"-(n\d+-R\d+)(?:-r\d+)?$")


def group_id(run_id: str) -> str:
    """Run id without its replicate suffix."""
    return REPLICATE_SUFFIX.sub("", run_id)


def run_scale(run_id: str) -> str:
    """Client count and round count of a run id, e.g. ``n10-R25``."""
    match = SCALE_PATTERN.search(run_id)
    return match.group(1) if match else ""


class RoundRow(BaseModel):
    """One line of rounds.csv; field order is the column order."""

    run_id: str
    strategy: str
    dataset: str
    partition_mode: str
    alpha: float | None = None
    round: int
    acc: float
    loss: float
    agg_time_s: float
    train_time_s: float
    comm_time_s: float
    replicate: int = 0
    clip_norm: float | None = None

    @field_validator("alpha", "clip_norm", mode="before")
    @classmethod
    def _blank_is_none(cls, value: Any) -> Any:
        return None if value == "" else value

    @classmethod
    def from_metrics(cls, cfg: ExperimentConfig, metrics: RoundMetrics) -> "RoundRow":
        return cls(
            run_id=cfg.run_id,
            strategy=str(cfg.strategy.kind),
            dataset=cfg.dataset,
            partition_mode=str(cfg.partition.mode),
            alpha=cfg.partition.alpha if cfg.partition.mode == "dirichlet" else None,
            round=metrics.round,
            acc=metrics.centralized_accuracy,
            loss=metrics.centralized_loss,
            agg_time_s=metrics.agg_time_s,
            train_time_s=metrics.train_time_s,
            comm_time_s=metrics.comm_time_s,
            replicate=cfg.replicate,
            clip_norm=metrics.clip_norm,
        )

    @property
    def group_id(self) -> str:
        return group_id(self.run_id)


class SummaryRow(BaseModel):
    """One line of summary.csv: final learning metrics and per-round mean timings of a run."""

    run_id: str
    strategy: str
    dataset: str
    partition_mode: str
    alpha: float | None = None
    replicate: str
    rounds: int
    acc: float
    loss: float
    agg_time_s: float
    train_time_s: float
    comm_time_s: float

    @classmethod
    def from_rows(cls, rows: list[RoundRow]) -> "SummaryRow":
        ordered = sorted(rows, key=lambda row: row.round)
        first, last = ordered[0], ordered[-1]
        return cls(
            run_id=first.run_id,
            strategy=first.strategy,
            dataset=first.dataset,
            partition_mode=first.partition_mode,
            alpha=first.alpha,
            replicate=str(first.replicate),
            rounds=len(ordered),
            acc=last.acc,
            loss=last.loss,
            agg_time_s=float(np.mean([row.agg_time_s for row in ordered])),
            train_time_s=float(np.mean([row.train_time_s for row in ordered])),
            comm_time_s=float(np.mean([row.comm_time_s for row in ordered])),
        )

    @property
    def group_id(self) -> str:
        return group_id(self.run_id)

    @classmethod
    def mean_of(cls, run_group: str, summaries: list["SummaryRow"]) -> "SummaryRow":
        """Replicate-mean row of one run group."""
        first = summaries[0]
        return cls(
            run_id=run_group,
            strategy=first.strategy,
            dataset=first.dataset,
            partition_mode=first.partition_mode,
            alpha=first.alpha,
            replicate="mean",
            rounds=first.rounds,
            **{
                metric: float(np.mean([getattr(summary, metric) for summary in summaries]))
                for metric in TABLE_METRICS
            },
        )


class RunMetadata(BaseModel):
    package_version: str
    python_version: str
    numpy_version: str
    generator: str
    master_seed: int
    partition_seed: int
    train_subset: int | None = None
    eval_subset: int | None = None
    label_skew: float | None = None
    started_at: datetime
    finished_at: datetime
    status: str = "completed"
    error: str | None = None


class ResultsBundle(BaseModel):
    """Everything written to run.json."""

    config: ExperimentConfig
    rounds: list[RoundMetrics]
    summary: SummaryRow | None = None
    class_counts: list[list[int]] = Field(default_factory=list)
    metadata: RunMetadata


class Checkpoint(ArrayModel):
    """Final global model and server state of a run."""

    run_id: str
    round: int
    params: FloatVector
    strategy_state: StrategyState
