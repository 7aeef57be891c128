import gzip
import struct
from logging import getLogger
from pathlib import Path

import numpy as np

from src.common import exceptions
from src.data.models import Dataset, DatasetSplits, SyntheticSpec

logger = getLogger(__name__)

IDX_LABELS_MAGIC = 0x00000801
IDX_IMAGES_MAGIC = 0x00000803

CIFAR10_RECORD_BYTES = 1 + 32 * 32 * 3
CIFAR10_TRAIN_FILES = [f"data_batch_{idx}.bin" for idx in range(1, 6)]
CIFAR10_TEST_FILE = "test_batch.bin"

IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
IDX_DATASETS = ("mnist", "fmnist")
SUPPORTED_DATASETS = (*IDX_DATASETS, "cifar10", "synthetic")


def _read_bytes(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as file:
                return file.read()
        return path.read_bytes()
    except OSError as err:
        msg = f"Cannot read dataset file {path}: {err}"
        logger.error(msg)
        raise exceptions.IngestionError(msg) from err


def _read_idx(path: Path, expected_magic: int) -> tuple[tuple[int, ...], bytes]:
    """
    Parse an IDX file header and return its dimension sizes and raw unsigned-byte payload.

    Header (big endian): u32 magic, then one u32 size per dimension; data follows as bytes.
    """
    payload = _read_bytes(path)
    if len(payload) < 4:
        raise exceptions.IngestionError(f"IDX file {path} is truncated: no header")

    (magic,) = struct.unpack(">I", payload[:4])
    if magic != expected_magic:
        msg = f"IDX file {path} has magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        logger.error(msg)
        raise exceptions.IngestionError(msg)

    ndims = magic & 0xFF
    header_size = 4 + 4 * ndims
    if len(payload) < header_size:
        raise exceptions.IngestionError(f"IDX file {path} is truncated inside its header")
    dims = struct.unpack(f">{ndims}I", payload[4:header_size])

    expected_bytes = int(np.prod(dims))
    body = payload[header_size:]
    if len(body) < expected_bytes:
        msg = f"IDX file {path} is truncated: header announces {expected_bytes} bytes, found {len(body)}"
        logger.error(msg)
        raise exceptions.IngestionError(msg)
    return dims, body[:expected_bytes]


def load_idx_dataset(images_path: Path, labels_path: Path, name: str = "idx", num_classes: int = 10) -> Dataset:
    """Load an IDX image/label file pair, pixels scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    logger.debug(f"Loading IDX dataset from {images_path} and {labels_path}")

    image_dims, image_bytes = _read_idx(images_path, IDX_IMAGES_MAGIC)
    (label_count,), label_bytes = _read_idx(labels_path, IDX_LABELS_MAGIC)

    image_count, rows, cols = image_dims
    if image_count != label_count:
        msg = f"IDX files disagree on sample count: {images_path} has {image_count}, {labels_path} has {label_count}"
        logger.error(msg)
        raise exceptions.IngestionError(msg)

    features = np.frombuffer(image_bytes, dtype=np.uint8).reshape(image_count, rows * cols) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        raise exceptions.IngestionError(f"Label file {labels_path} holds class {labels.max()} >= {num_classes}")

    logger.debug(f"Loaded {image_count} samples of {rows}x{cols} from {images_path}")
    return Dataset(name=name, features=features, labels=labels, num_classes=num_classes)


def load_cifar10_batches(paths: list[Path], name: str = "cifar10") -> Dataset:
    """Load CIFAR-10 binary batches: one label byte then 3072 channel-major pixel bytes per record."""
    features, labels = [], []
    for path in paths:
        payload = _read_bytes(Path(path))
        if len(payload) == 0 or len(payload) % CIFAR10_RECORD_BYTES:
            msg = f"CIFAR-10 batch {path} has {len(payload)} bytes, not a multiple of {CIFAR10_RECORD_BYTES}"
            logger.error(msg)
            raise exceptions.IngestionError(msg)
        records = np.frombuffer(payload, dtype=np.uint8).reshape(-1, CIFAR10_RECORD_BYTES)
        labels.append(records[:, 0].astype(np.int64))
        features.append(records[:, 1:] / 255.0)

    label_vector = np.concatenate(labels)
    if label_vector.max() >= 10:
        raise exceptions.IngestionError(f"CIFAR-10 batches {paths} hold a label >= 10")
    return Dataset(name=name, features=np.concatenate(features), labels=label_vector, num_classes=10)


def _simplex_means(num_classes: int, input_dim: int) -> tuple[np.ndarray, float]:
    """Class centres inside the unit cube and the smallest distance between two of them."""
    if input_dim >= num_classes:
        means = np.full((num_classes, input_dim), 0.25)
        means[np.arange(num_classes), np.arange(num_classes)] = 0.75
        return means, 0.5 * np.sqrt(2.0)

    if input_dim == 1:
        means = np.linspace(0.1, 0.9, num_classes).reshape(num_classes, 1)
        return means, 0.8 / max(num_classes - 1, 1)

    # Fewer dims than classes: vertices of a regular polygon in the first two coordinates.
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = np.full((num_classes, input_dim), 0.5)
    means[:, 0] += 0.35 * np.cos(angles)
    means[:, 1] += 0.35 * np.sin(angles)
    return means, 2.0 * 0.35 * np.sin(np.pi / num_classes)


def generate_synthetic(num_classes: int, samples_per_class: int, input_dim: int, seed: int) -> Dataset:
    """Linearly separable Gaussian blobs, one per class, clipped to [0, 1]."""
    if min(num_classes, samples_per_class, input_dim) < 1:
        raise exceptions.ConfigurationError("Synthetic dataset counts must all be >= 1")

    rng = np.random.default_rng(seed)
    means, spacing = _simplex_means(num_classes, input_dim)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    noise = rng.normal(0.0, spacing / 10.0, size=(labels.shape[0], input_dim))
    features = np.clip(means[labels] + noise, 0.0, 1.0)
    return Dataset(name="synthetic", features=features, labels=labels, num_classes=num_classes)


def _idx_file(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    msg = f"Dataset file {directory / stem} (or .gz) not found"
    logger.error(msg)
    raise exceptions.IngestionError(msg)


def load_dataset_splits(
    name: str, data_dir: Path | None = None, synthetic: SyntheticSpec | None = None
) -> DatasetSplits:
    """Train and held-out test splits for a dataset name, read from ``<data_dir>/<name>/``."""
    if name == "synthetic":
        synthetic = synthetic or SyntheticSpec()
        args = (synthetic.num_classes, synthetic.samples_per_class, synthetic.input_dim)
        train = generate_synthetic(*args, seed=synthetic.seed)
        test = generate_synthetic(
            synthetic.num_classes, synthetic.test_samples_per_class, synthetic.input_dim, seed=synthetic.seed + 1
        )
        return DatasetSplits(train=train, test=test)

    if name not in SUPPORTED_DATASETS:
        raise exceptions.ConfigurationError(f"Unknown dataset {name!r}, expected one of {SUPPORTED_DATASETS}")
    if data_dir is None:
        raise exceptions.ConfigurationError(
            f"Dataset {name!r} needs a data directory (--data-dir or FEDBENCH_DATA_DIR)"
        )

    directory = Path(data_dir) / name
    logger.info(f"Loading {name} from {directory}")
    if name == "cifar10":
        return DatasetSplits(
            train=load_cifar10_batches([directory / file for file in CIFAR10_TRAIN_FILES]),
            test=load_cifar10_batches([directory / CIFAR10_TEST_FILE]),
        )

    splits = {}
    for split, (images, labels) in IDX_FILES.items():
        splits[split] = load_idx_dataset(_idx_file(directory, images), _idx_file(directory, labels), name=name)
    return DatasetSplits(**splits)


def select_subset(dataset: Dataset, count: int | None, seed: int) -> Dataset:
    """Seeded random subset of ``count`` rows, or the dataset itself when ``count`` is unset or large enough."""
    if count is None or count >= len(dataset):
        return dataset
    indices = np.sort(np.random.default_rng(seed).permutation(len(dataset))[:count])
    return dataset.subset(indices)
