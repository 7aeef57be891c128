from enum import StrEnum
from typing import Literal

import numpy as np
import numpy.typing as npt
from pydantic import Field, PositiveInt

from src.common.schema import FrozenModel

# Flat float64 vector of model weights exchanged between clients and server.
ParameterVector = npt.NDArray[np.float64]


class ModelSpec(FrozenModel):
    """Dense ReLU classifier layout and its initialization seed."""

    input_dim: int = Field(ge=1)
    hidden_dims: list[PositiveInt] = Field(default_factory=lambda: [128])
    output_classes: int = Field(ge=2)
    activation: Literal["relu"] = "relu"
    init_seed: int = Field(default=0, ge=0)

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def parameter_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_dims)


class OptimizerKind(StrEnum):
    SGD = "sgd"
    ADAM = "adam"


DEFAULT_LEARNING_RATES = {OptimizerKind.SGD: 0.01, OptimizerKind.ADAM: 0.001}


class LocalOptimizerConfig(FrozenModel):
    """Client-side optimizer and the shape of one local training call."""

    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float | None = Field(default=None, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    local_epochs: int = Field(default=1, ge=1)

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is None:
            return DEFAULT_LEARNING_RATES[self.kind]
        return self.learning_rate
