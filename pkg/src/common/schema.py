from typing import Annotated, Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PlainSerializer, PlainValidator, WithJsonSchema


class FrozenModel(BaseModel):
    """Base for configuration values: immutable and strict about unknown keys."""

    model_config = ConfigDict(frozen=True, extra="forbid")


class ArrayModel(BaseModel):
    """Base for models carrying numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")


def _as_float_vector(value: Any) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != 1:
        raise ValueError(f"expected a one-dimensional vector, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("vector contains non-finite values")
    return array


FloatVector = Annotated[
    np.ndarray,
    PlainValidator(_as_float_vector),
    PlainSerializer(lambda array: array.tolist(), return_type=list),
    WithJsonSchema({"type": "array", "items": {"type": "number"}}),
]


class TimingRecord(BaseModel):
    """Wall-clock timings of one client's participation in a round, in seconds."""

    train_seconds: float = Field(default=0.0, ge=0.0)
    serialize_seconds: float = Field(default=0.0, ge=0.0)
    deserialize_seconds: float = Field(default=0.0, ge=0.0)

    @property
    def communication_seconds(self) -> float:
        return self.serialize_seconds + self.deserialize_seconds
