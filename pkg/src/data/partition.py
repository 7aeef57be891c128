from logging import getLogger

import numpy as np

from src.common import exceptions
from src.data.models import Dataset, Partition, PartitionMode, PartitionSpec

logger = getLogger(__name__)


def _iid(num_samples: int, spec: PartitionSpec, rng: np.random.Generator) -> list[np.ndarray]:
    return list(np.array_split(rng.permutation(num_samples), spec.num_clients))


def _dirichlet(dataset: Dataset, spec: PartitionSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Per-class label skew: each class is dealt out by proportions drawn from Dir(alpha)."""
    buckets: list[list[np.ndarray]] = [[] for _ in range(spec.num_clients)]
    for label in range(dataset.num_classes):
        class_indices = np.flatnonzero(dataset.labels == label)
        rng.shuffle(class_indices)
        proportions = rng.dirichlet(np.full(spec.num_clients, spec.alpha))
        cuts = (np.cumsum(proportions)[:-1] * class_indices.shape[0]).astype(int)
        for client, chunk in enumerate(np.split(class_indices, cuts)):
            buckets[client].append(chunk)
    return [np.concatenate(chunks).astype(np.int64) for chunks in buckets]


def _repair_empty_clients(assignments: list[np.ndarray]) -> list[np.ndarray]:
    """Move single samples from the largest client to every empty one."""
    for client, indices in enumerate(assignments):
        if indices.shape[0]:
            continue
        donor = int(np.argmax([chunk.shape[0] for chunk in assignments]))
        logger.debug(f"Client {client} received no samples, moving one from client {donor}")
        assignments[client] = assignments[donor][-1:]
        assignments[donor] = assignments[donor][:-1]
    return assignments


def partition(dataset: Dataset, spec: PartitionSpec) -> Partition:
    """Deal dataset indices out to ``spec.num_clients`` clients as a disjoint cover."""
    num_samples = len(dataset)
    if num_samples == 0:
        raise exceptions.ConfigurationError(f"Cannot partition empty dataset {dataset.name!r}")
    if spec.num_clients > num_samples:
        msg = f"Cannot give {spec.num_clients} clients at least one sample each from {num_samples} samples"
        logger.error(msg)
        raise exceptions.ConfigurationError(msg)

    rng = np.random.default_rng(spec.seed)
    if spec.mode == PartitionMode.IID:
        assignments = _iid(num_samples, spec, rng)
    else:
        assignments = _repair_empty_clients(_dirichlet(dataset, spec, rng))

    logger.debug(f"Partitioned {num_samples} samples ({spec.mode}) into sizes {[a.shape[0] for a in assignments]}")
    return Partition(assignments=assignments, num_samples=num_samples)


def class_counts(part: Partition, dataset: Dataset) -> np.ndarray:
    """Matrix of shape (clients, classes) with the number of samples of each class per client."""
    return np.stack(
        [np.bincount(dataset.labels[indices], minlength=dataset.num_classes) for indices in part.assignments]
    )


def label_skew(part: Partition, dataset: Dataset) -> float:
    """Mean total-variation distance between each client's class distribution and the global one."""
    counts = class_counts(part, dataset).astype(np.float64)
    local = counts / counts.sum(axis=1, keepdims=True)
    overall = np.bincount(dataset.labels, minlength=dataset.num_classes) / len(dataset)
    return float(np.mean(0.5 * np.abs(local - overall).sum(axis=1)))
