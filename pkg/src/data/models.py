from enum import StrEnum
from typing import Annotated, Any

import numpy as np
from pydantic import Field, PlainValidator, model_validator

from src.common.schema import ArrayModel, FrozenModel


def _as_feature_matrix(value: Any) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.ndim != 2:
        raise ValueError(f"features must be a (samples, input_dim) matrix, got shape {array.shape}")
    return array


def _as_label_vector(value: Any) -> np.ndarray:
    array = np.asarray(value)
    if array.ndim != 1 or (array.size and not np.issubdtype(array.dtype, np.integer)):
        raise ValueError("labels must be a one-dimensional integer vector")
    return array.astype(np.int64, copy=False)


FeatureMatrix = Annotated[np.ndarray, PlainValidator(_as_feature_matrix)]
LabelVector = Annotated[np.ndarray, PlainValidator(_as_label_vector)]


class Dataset(ArrayModel):
    """Row-major features scaled to [0, 1] with one class id per row."""

    name: str
    features: FeatureMatrix
    labels: LabelVector
    num_classes: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_rows(self) -> "Dataset":
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        return self

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            name=self.name, features=self.features[indices], labels=self.labels[indices], num_classes=self.num_classes
        )


class DatasetSplits(ArrayModel):
    train: Dataset
    test: Dataset


class PartitionMode(StrEnum):
    IID = "iid"
    DIRICHLET = "dirichlet"


class PartitionSpec(FrozenModel):
    """How training samples are dealt out to clients."""

    mode: PartitionMode = PartitionMode.IID
    num_clients: int = Field(default=10, ge=1)
    alpha: float = Field(default=0.5, gt=0.0)
    seed: int = Field(default=0, ge=0)


class Partition(ArrayModel):
    """
    Per-client lists of dataset indices.

    Every client holds at least one index and no index appears twice. When ``num_samples`` is set
    the assignments must also cover every index in ``[0, num_samples)``.
    """

    assignments: list[np.ndarray]
    num_samples: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_disjoint_cover(self) -> "Partition":
        empty = [client for client, indices in enumerate(self.assignments) if indices.shape[0] == 0]
        if empty:
            raise ValueError(f"clients {empty} hold no samples")
        merged = np.concatenate(self.assignments) if self.assignments else np.empty(0, dtype=np.int64)
        if np.unique(merged).shape[0] != merged.shape[0]:
            raise ValueError("a sample is assigned to more than one client")
        if self.num_samples is not None and not np.array_equal(np.sort(merged), np.arange(self.num_samples)):
            raise ValueError(f"assignments do not cover the {self.num_samples} samples exactly once")
        return self

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    @property
    def sizes(self) -> list[int]:
        return [int(indices.shape[0]) for indices in self.assignments]


class SyntheticSpec(FrozenModel):
    """Gaussian-blob dataset used for fast runs and tests."""

    num_classes: int = Field(default=10, ge=2)
    samples_per_class: int = Field(default=200, ge=1)
    test_samples_per_class: int = Field(default=50, ge=1)
    input_dim: int = Field(default=20, ge=1)
    seed: int = Field(default=0, ge=0)
