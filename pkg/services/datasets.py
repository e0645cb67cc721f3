import csv
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List

import numpy as np

from services.learning import Dataset
from utils.errors import InvalidArgument

logger = logging.getLogger(__name__)


def generate_synthetic(seed: int, n_samples: int, d: int, n_classes: int, class_separation: float) -> Dataset:
    """Gaussian class clusters.

    Class c is centred at `class_separation * u_c` where u_c is a random unit vector;
    samples add N(0, I) noise. Labels cycle through the classes before shuffling, so
    class counts differ by at most one.
    """
    if n_classes < 2:
        raise InvalidArgument("synthetic data needs at least two classes")
    if n_samples < n_classes:
        raise InvalidArgument(f"n_samples ({n_samples}) must be at least n_classes ({n_classes})")
    if d < 1 or class_separation < 0:
        raise InvalidArgument("d must be positive and class_separation non-negative")

    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n_classes, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centres = class_separation * directions

    labels = rng.permutation(np.arange(n_samples) % n_classes)
    features = centres[labels] + rng.normal(size=(n_samples, d))
    return Dataset(features, labels, n_classes)


def load_dataset_csv(path, n_classes: int = None) -> Dataset:
    """Load `f0..f{d-1},label` CSV with a header row."""
    path = Path(path)
    try:
        with path.open(newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if not header or header[-1].strip() != "label":
                raise InvalidArgument(f"{path}: header must end with a 'label' column")
            expected = [f"f{i}" for i in range(len(header) - 1)]
            if [h.strip() for h in header[:-1]] != expected:
                raise InvalidArgument(f"{path}: feature columns must be named f0..f{len(header) - 2}")

            features, labels = [], []
            for line_number, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise InvalidArgument(f"{path}:{line_number}: expected {len(header)} columns")
                try:
                    labels.append(int(row[-1]))
                except ValueError:
                    raise InvalidArgument(f"{path}:{line_number}: non-integer label {row[-1]!r}")
                features.append([float(v) for v in row[:-1]])
    except OSError as e:
        logger.error(f"Error reading dataset {path}: {e}")
        raise

    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InvalidArgument(f"{path}: no samples")
    classes = n_classes if n_classes is not None else int(labels.max()) + 1
    logger.info(f"Loaded {labels.size} samples with {classes} classes from {path}")
    return Dataset(np.asarray(features, dtype=np.float64), labels, classes)


def split_holdout(data: Dataset, test_fraction: float, seed: int):
    """Split into (train, test); the test part is never partitioned to nodes."""
    if not 0 < test_fraction < 1:
        raise InvalidArgument("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(data))
    n_test = max(1, int(round(len(data) * test_fraction)))
    if n_test >= len(data):
        raise InvalidArgument("dataset too small for a holdout split")
    return data.subset(order[n_test:]), data.subset(order[:n_test])


class PartitionKind(str, Enum):
    DIRICHLET = "dirichlet"
    SHARDS = "shards"


@dataclass(frozen=True)
class PartitionScheme:
    kind: PartitionKind = PartitionKind.DIRICHLET
    alpha: float = 0.5
    shards_per_node: int = 2

    def __post_init__(self):
        if self.kind == PartitionKind.DIRICHLET and self.alpha <= 0:
            raise InvalidArgument("dirichlet alpha must be positive")
        if self.kind == PartitionKind.SHARDS and self.shards_per_node < 1:
            raise InvalidArgument("shards_per_node must be positive")


def partition_data(data: Dataset, n_nodes: int, scheme: PartitionScheme, seed: int) -> List[Dataset]:
    """Split a dataset into disjoint non-IID node datasets whose union is the input."""
    if n_nodes < 1:
        raise InvalidArgument("n_nodes must be at least 1")
    if n_nodes > len(data):
        raise InvalidArgument(f"more nodes ({n_nodes}) than samples ({len(data)})")
    if n_nodes == 1:
        return [data]

    rng = np.random.default_rng(seed)
    if scheme.kind == PartitionKind.SHARDS:
        parts = _shard_indices(data, n_nodes, scheme.shards_per_node, rng)
    else:
        parts = _dirichlet_indices(data, n_nodes, scheme.alpha, rng)
    _fill_empty(parts)
    return [data.subset(np.sort(np.asarray(p, dtype=np.int64))) for p in parts]


def _dirichlet_indices(data: Dataset, n_nodes: int, alpha: float, rng) -> List[list]:
    # one class-proportion vector per node
    proportions = rng.dirichlet(np.full(data.n_classes, alpha), size=n_nodes)
    parts: List[list] = [[] for _ in range(n_nodes)]
    for label in range(data.n_classes):
        indices = rng.permutation(np.flatnonzero(data.labels == label))
        if indices.size == 0:
            continue
        share = proportions[:, label]
        total = share.sum()
        share = share / total if total > 0 else np.full(n_nodes, 1.0 / n_nodes)
        cuts = (np.cumsum(share) * indices.size).astype(int)[:-1]
        for node, chunk in enumerate(np.split(indices, cuts)):
            parts[node].extend(chunk.tolist())
    return parts


def _shard_indices(data: Dataset, n_nodes: int, shards_per_node: int, rng) -> List[list]:
    by_label = np.argsort(data.labels, kind="stable")
    n_shards = min(n_nodes * shards_per_node, len(data))
    shards = np.array_split(by_label, n_shards)
    order = rng.permutation(n_shards)
    parts: List[list] = [[] for _ in range(n_nodes)]
    for position, shard_id in enumerate(order):
        parts[position % n_nodes].extend(shards[shard_id].tolist())
    return parts


def _fill_empty(parts: List[list]):
    """Move single samples from the largest node to empty ones; every node holds at least one."""
    while True:
        sizes = [len(p) for p in parts]
        smallest = int(np.argmin(sizes))
        if sizes[smallest] > 0:
            return
        largest = int(np.argmax(sizes))
        parts[smallest].append(parts[largest].pop())
