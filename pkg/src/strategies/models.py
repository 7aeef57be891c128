from enum import StrEnum
from typing import Any

from pydantic import BaseModel, Field, ValidationInfo, model_validator

from src.common.schema import ArrayModel, FloatVector, FrozenModel, TimingRecord


class StrategyKind(StrEnum):
    FEDAVG = "fedavg"
    FEDAVGM = "fedavgm"
    FEDADAM = "fedadam"
    FEDADAGRAD = "fedadagrad"
    FEDMEDIAN = "fedmedian"
    FEDPROX = "fedprox"
    DP = "dp"


ADAPTIVE_KINDS = (StrategyKind.FEDADAM, StrategyKind.FEDADAGRAD)


def default_server_lr(kind: StrategyKind, dataset: str | None = None) -> float:
    """Server step size used when a config leaves ``server_lr`` unset; CIFAR-10 takes a smaller adaptive step."""
    if kind in ADAPTIVE_KINDS:
        return 0.01 if dataset == "cifar10" else 0.1
    return 1.0


class StrategyConfig(FrozenModel):
    """Server aggregation strategy and its hyperparameters."""

    kind: StrategyKind = StrategyKind.FEDAVG
    server_lr: float = Field(default=1.0, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.99, ge=0.0, lt=1.0)
    tau: float = Field(default=1e-3, gt=0.0)
    prox_mu: float = Field(default=0.01, ge=0.0)
    dp_noise_multiplier: float = Field(default=1.0, ge=0.0)
    dp_target_quantile: float = Field(default=0.5, gt=0.0, lt=1.0)
    dp_clip_lr: float = Field(default=0.2, gt=0.0)
    dp_initial_clip: float = Field(default=0.1, gt=0.0)

    @model_validator(mode="before")
    @classmethod
    def _fill_server_lr(cls, data: Any, info: ValidationInfo) -> Any:
        if not isinstance(data, dict) or data.get("server_lr") is not None:
            return data
        kind = data.get("kind", StrategyKind.FEDAVG)
        if kind not in list(StrategyKind):
            return data
        dataset = (info.context or {}).get("dataset")
        return {**data, "server_lr": default_server_lr(StrategyKind(kind), dataset)}

    @classmethod
    def for_dataset(cls, dataset: str, **values: Any) -> "StrategyConfig":
        """Config whose unset ``server_lr`` takes the default for ``dataset``."""
        return cls.model_validate(values, context={"dataset": dataset})


class StrategyState(ArrayModel):
    """Server state that persists across rounds; buffers stay unset until first used."""

    kind: StrategyKind
    momentum_buffer: FloatVector | None = None
    first_moment: FloatVector | None = None
    second_moment: FloatVector | None = None
    clip_norm: float | None = Field(default=None, gt=0.0)
    round_index: int = Field(default=0, ge=0)
    noise_rng_state: dict[str, Any] | None = None


class ClientUpdate(ArrayModel):
    """One client's contribution to a round."""

    client_id: int = Field(ge=0)
    new_params: FloatVector
    num_samples: int = Field(ge=1)
    # L2 norm of the delta as received by the server; set in DP runs
    pre_clip_norm: float | None = Field(default=None, ge=0.0)
    timing: TimingRecord = Field(default_factory=TimingRecord)


class ClientInstruction(BaseModel):
    """Per-round settings the server sends along with the global model."""

    round_index: int = Field(ge=0)
    prox_mu: float = Field(default=0.0, ge=0.0)
