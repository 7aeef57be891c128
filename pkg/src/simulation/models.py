from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, NonNegativeFloat, model_validator

from src.adversary.models import AdversarySpec
from src.common.schema import ArrayModel, FloatVector, FrozenModel
from src.data.models import PartitionMode, PartitionSpec, SyntheticSpec
from src.model.models import LocalOptimizerConfig, ModelSpec
from src.strategies.models import StrategyConfig, StrategyKind, StrategyState, default_server_lr

DatasetName = Literal["mnist", "fmnist", "cifar10", "synthetic"]

MODEL_LAYOUTS = {
    "mnist": {"input_dim": 784, "hidden_dims": [128], "output_classes": 10},
    "fmnist": {"input_dim": 784, "hidden_dims": [128], "output_classes": 10},
    "cifar10": {"input_dim": 3072, "hidden_dims": [256], "output_classes": 10},
}


def _as_dict(value: Any) -> dict[str, Any]:
    if value is None:
        return {}
    if isinstance(value, BaseModel):
        return value.model_dump()
    return dict(value)


def default_model_layout(dataset: str, synthetic: dict[str, Any]) -> dict[str, Any]:
    if dataset == "synthetic":
        spec = SyntheticSpec.model_validate(synthetic)
        return {"input_dim": spec.input_dim, "hidden_dims": [32], "output_classes": spec.num_classes}
    return dict(MODEL_LAYOUTS.get(dataset, {}))


class ExperimentConfig(FrozenModel):
    """Everything that determines one simulation run."""

    name: str = "experiment"
    dataset: DatasetName = "mnist"
    data_dir: Path | None = None
    rounds: int = Field(default=25, ge=1)
    num_clients: int = Field(default=10, ge=1)
    master_seed: int = Field(default=0, ge=0)
    replicate: int = Field(default=0, ge=0)
    train_subset: int | None = Field(default=None, ge=1)
    eval_subset: int | None = Field(default=None, ge=1)
    workers: int = Field(default=4, ge=1)
    partition: PartitionSpec = PartitionSpec()
    model: ModelSpec
    local: LocalOptimizerConfig = LocalOptimizerConfig()
    strategy: StrategyConfig = StrategyConfig()
    adversary: AdversarySpec = AdversarySpec()
    synthetic: SyntheticSpec = SyntheticSpec()

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        """Derive values other sections depend on: client count, seeds, model layout, server step size."""
        if not isinstance(data, dict):
            return data
        data = dict(data)
        dataset = data.get("dataset", "mnist")
        master_seed = data.get("master_seed", 0)

        partition = _as_dict(data.get("partition"))
        partition["num_clients"] = data.get("num_clients", 10)
        partition.setdefault("seed", master_seed)
        data["partition"] = partition

        model = _as_dict(data.get("model"))
        for key, value in default_model_layout(dataset, _as_dict(data.get("synthetic"))).items():
            model.setdefault(key, value)
        model.setdefault("init_seed", master_seed)
        data["model"] = model

        strategy = _as_dict(data.get("strategy"))
        kind = strategy.get("kind", "fedavg")
        if strategy.get("server_lr") is None and kind in list(StrategyKind):
            strategy["server_lr"] = default_server_lr(StrategyKind(kind), dataset)
        data["strategy"] = strategy
        return data

    @model_validator(mode="after")
    def _check_clients(self) -> "ExperimentConfig":
        unknown = sorted(client for client in self.adversary.affected_clients if client >= self.num_clients)
        if unknown:
            raise ValueError(f"adversary clients {unknown} are not among the {self.num_clients} clients")
        return self

    @property
    def run_id(self) -> str:
        parts = [self.name, str(self.strategy.kind), self.dataset, str(self.partition.mode)]
        if self.partition.mode == PartitionMode.DIRICHLET:
            parts.append(f"a{self.partition.alpha:g}")
        parts += [f"n{self.num_clients}", f"R{self.rounds}", f"r{self.replicate}"]
        return "-".join(parts)


class RoundMetrics(BaseModel):
    """Learning and timing metrics recorded after one round."""

    round: int = Field(ge=1)
    centralized_accuracy: float = Field(ge=0.0, le=1.0)
    centralized_loss: NonNegativeFloat
    agg_time_s: NonNegativeFloat
    train_time_s: NonNegativeFloat
    comm_time_s: NonNegativeFloat
    clip_norm: float | None = None


class ExperimentResult(ArrayModel):
    """
    Outcome of a run: its metric series plus the latest global model and server state.

    Status is ``running`` while rounds are still being added.
    """

    config: ExperimentConfig
    rounds: list[RoundMetrics] = Field(default_factory=list)
    final_params: FloatVector | None = None
    strategy_state: StrategyState | None = None
    class_counts: list[list[int]] = Field(default_factory=list)
    label_skew: float | None = None
    status: Literal["running", "completed", "aborted"] = "completed"
    error: str | None = None

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)

    @property
    def is_finished(self) -> bool:
        return self.status == "completed" and self.num_rounds == self.config.rounds