"""Desk-scale learning substrate.

The model is multinomial (softmax) logistic regression with bias. Parameters live in a
flat `ParamVector`: the d x C weight matrix in row-major order followed by the C biases.
Updates exchanged between nodes are parameter deltas (trained model minus global model).
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from config import DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_INIT_SCALE, DEFAULT_LEARNING_RATE
from utils.errors import InvalidArgument

logger = logging.getLogger(__name__)

ModelShape = Tuple[int, int]  # (n_features, n_classes)


def model_size(shape: ModelShape) -> int:
    n_features, n_classes = shape
    return n_features * n_classes + n_classes


def _check_shape(shape) -> ModelShape:
    try:
        n_features, n_classes = (int(s) for s in shape)
    except (TypeError, ValueError):
        raise InvalidArgument(f"model shape must be (n_features, n_classes), got {shape!r}")
    if n_features < 1 or n_classes < 1:
        raise InvalidArgument(f"model shape must be positive, got {shape!r}")
    return n_features, n_classes


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat real-valued model parameters (global models and update deltas)."""

    values: np.ndarray
    shape: ModelShape

    def __post_init__(self):
        shape = _check_shape(self.shape)
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size != model_size(shape):
            raise InvalidArgument(
                f"parameter count {values.size} does not match shape {shape} ({model_size(shape)})"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("parameters must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", shape)

    def __len__(self) -> int:
        return self.values.size

    def __add__(self, other: "ParamVector") -> "ParamVector":
        _require_same_shape(self, other)
        return ParamVector(self.values + other.values, self.shape)

    def __sub__(self, other: "ParamVector") -> "ParamVector":
        _require_same_shape(self, other)
        return ParamVector(self.values - other.values, self.shape)

    @property
    def weights(self) -> np.ndarray:
        n_features, n_classes = self.shape
        return self.values[: n_features * n_classes].reshape(n_features, n_classes)

    @property
    def bias(self) -> np.ndarray:
        n_features, n_classes = self.shape
        return self.values[n_features * n_classes:]

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.shape)

    def to_list(self) -> list:
        return self.values.tolist()


def _require_same_shape(*vectors: ParamVector):
    first = vectors[0]
    for vector in vectors[1:]:
        if vector.shape != first.shape:
            raise InvalidArgument(f"shape mismatch: {first.shape} vs {vector.shape}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Node-local samples: features (n x d) and integer labels in [0, n_classes)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise InvalidArgument("features must be a 2-D matrix")
        if features.shape[0] == 0:
            raise InvalidArgument("dataset must hold at least one sample")
        if labels.shape != (features.shape[0],):
            raise InvalidArgument("labels must be one per sample")
        if not np.issubdtype(labels.dtype, np.integer):
            raise InvalidArgument("labels must be integers")
        if self.n_classes < 1 or labels.min() < 0 or labels.max() >= self.n_classes:
            raise InvalidArgument(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.n_classes)

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            max(p.n_classes for p in parts),
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgument("epochs and batch_size must be positive")
        # learning_rate 0 is allowed: it yields a zero delta
        if self.learning_rate < 0:
            raise InvalidArgument("learning_rate must be non-negative")


class Aggregator(str, Enum):
    MEAN = "mean"
    CWMED = "cwmed"


def init_model(seed: int, shape: ModelShape) -> ParamVector:
    """Random model drawn from N(0, DEFAULT_INIT_SCALE^2) per coordinate."""
    shape = _check_shape(shape)
    rng = np.random.default_rng(seed)
    return ParamVector(rng.normal(0.0, DEFAULT_INIT_SCALE, size=model_size(shape)), shape)


def _check_compatible(model: ParamVector, data: Dataset):
    n_features, n_classes = model.shape
    if data.n_features != n_features:
        raise InvalidArgument(f"dataset has {data.n_features} features, model expects {n_features}")
    if data.labels.max() >= n_classes:
        raise InvalidArgument(f"label {int(data.labels.max())} out of range for {n_classes} classes")


def _probabilities(weights: np.ndarray, bias: np.ndarray, features: np.ndarray) -> np.ndarray:
    logits = features @ weights + bias
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    return exp / exp.sum(axis=1, keepdims=True)


def _gradient(weights, bias, features, labels) -> Tuple[np.ndarray, np.ndarray]:
    probs = _probabilities(weights, bias, features)
    probs[np.arange(labels.size), labels] -= 1.0
    probs /= labels.size
    return features.T @ probs, probs.sum(axis=0)


def softmax_loss(model: ParamVector, data: Dataset) -> float:
    """Mean softmax cross-entropy of the model on the dataset."""
    _check_compatible(model, data)
    logits = data.features @ model.weights + model.bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_norm - shifted[np.arange(len(data)), data.labels]))


def loss_gradient(model: ParamVector, data: Dataset) -> ParamVector:
    """Analytic gradient of `softmax_loss` with respect to the parameters."""
    _check_compatible(model, data)
    grad_w, grad_b = _gradient(model.weights, model.bias, data.features, data.labels)
    return ParamVector(np.concatenate([grad_w.reshape(-1), grad_b]), model.shape)


def local_train(global_model: ParamVector, data: Dataset, cfg: TrainConfig) -> ParamVector:
    """Mini-batch gradient descent from the global model; returns trained minus global."""
    _check_compatible(global_model, data)
    rng = np.random.default_rng(cfg.seed)
    weights = global_model.weights.copy()
    bias = global_model.bias.copy()
    n = len(data)

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad_w, grad_b = _gradient(weights, bias, data.features[batch], data.labels[batch])
            weights -= cfg.learning_rate * grad_w
            bias -= cfg.learning_rate * grad_b

    trained = np.concatenate([weights.reshape(-1), bias])
    return ParamVector(trained - global_model.values, global_model.shape)


def evaluate(model: ParamVector, data: Dataset) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lowest class.

    Datasets are never empty (the constructor rejects them).
    """
    _check_compatible(model, data)
    predictions = np.argmax(data.features @ model.weights + model.bias, axis=1)
    return float(np.mean(predictions == data.labels))


def _stack_deltas(global_model: ParamVector, deltas: Sequence[ParamVector]) -> np.ndarray:
    if not deltas:
        raise InvalidArgument("aggregation needs at least one delta")
    _require_same_shape(global_model, *deltas)
    return np.stack([d.values for d in deltas])


def aggregate_mean(global_model: ParamVector, deltas: Sequence[ParamVector]) -> ParamVector:
    """FedAvg with uniform weights: global + mean(deltas)."""
    stacked = _stack_deltas(global_model, deltas)
    return ParamVector(global_model.values + stacked.mean(axis=0), global_model.shape)


def aggregate_cwmed(global_model: ParamVector, deltas: Sequence[ParamVector]) -> ParamVector:
    """Coordinate-wise median: global + elementwise median(deltas)."""
    stacked = _stack_deltas(global_model, deltas)
    return ParamVector(global_model.values + np.median(stacked, axis=0), global_model.shape)


def aggregate(aggregator: Aggregator, global_model: ParamVector, deltas: Sequence[ParamVector]) -> ParamVector:
    if Aggregator(aggregator) is Aggregator.CWMED:
        return aggregate_cwmed(global_model, deltas)
    return aggregate_mean(global_model, deltas)
