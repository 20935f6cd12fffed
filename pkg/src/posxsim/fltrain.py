"""Local training over a linear model, plus server-side update averaging.

The local dataset is the device's private state; it is grown one sensed row
at a time and later consumed by full-batch gradient descent on mean-squared
error.  Both codecs here are canonical byte formats -- the dataset bytes get
committed to the secure world and the weight bytes are the signed protocol
output -- so nothing about them may depend on platform or insertion order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np


class DimensionError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


class TrainingDivergenceError(ArithmeticError):
    """Weights left the finite range mid-training."""


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Linear-model parameters: coefficient vector and intercept."""

    w: np.ndarray
    b: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        if self.w.ndim != 1:
            raise DimensionError("w must be a vector")
        if not (np.all(np.isfinite(self.w)) and math.isfinite(self.b)):
            raise ValueError("weights must be finite")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return bool(np.array_equal(self.w, other.w) and self.b == other.b)

    @property
    def dim(self) -> int:
        return len(self.w)

    def serialize(self) -> bytes:
        # dimension first, then coefficients, then intercept; every entry a
        # 64-bit little-endian float
        return struct.pack(f"<{self.dim + 2}d", float(self.dim), *self.w, self.b)

    @classmethod
    def deserialize(cls, data: bytes) -> "ModelWeights":
        if len(data) < 16 or len(data) % 8 != 0:
            raise ValueError(f"weight bytes have invalid length {len(data)}")
        values = struct.unpack(f"<{len(data) // 8}d", data)
        dim = int(values[0])
        if dim != values[0] or dim < 0 or len(values) != dim + 2:
            raise ValueError("weight bytes disagree with declared dimension")
        return cls(w=np.array(values[1 : 1 + dim], dtype=np.float64), b=values[1 + dim])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sensed (features, target) rows; append-only, fixed feature dimension."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=np.float64))
        if self.features.ndim != 2 or self.targets.ndim != 1:
            raise DimensionError("features must be (n, d), targets must be (n,)")
        if len(self.features) != len(self.targets):
            raise DimensionError("row count mismatch between features and targets")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return bool(
            np.array_equal(self.features, other.features)
            and np.array_equal(self.targets, other.targets)
        )

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(features=np.zeros((0, 0)), targets=np.zeros(0))

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def append(self, x: Sequence[float], y: float) -> "Dataset":
        row = np.asarray(x, dtype=np.float64).reshape(1, -1)
        if len(self) == 0:
            return Dataset(features=row, targets=np.array([y], dtype=np.float64))
        if row.shape[1] != self.dim:
            raise DimensionError(f"row dimension {row.shape[1]} != dataset dimension {self.dim}")
        return Dataset(
            features=np.vstack([self.features, row]),
            targets=np.append(self.targets, np.float64(y)),
        )

    def serialize(self) -> bytes:
        if len(self) == 0:
            return b""
        rows = np.hstack([self.features, self.targets.reshape(-1, 1)])
        header = struct.pack("<d", float(self.dim))
        return header + rows.astype("<f8").tobytes()

    @classmethod
    def deserialize(cls, data: bytes) -> "Dataset":
        if data == b"":
            return cls.empty()
        if len(data) < 8 or len(data) % 8 != 0:
            raise ValueError(f"dataset bytes have invalid length {len(data)}")
        (dim_float,) = struct.unpack_from("<d", data, 0)
        dim = int(dim_float)
        if dim != dim_float or dim < 1:
            raise ValueError("dataset bytes carry an invalid dimension")
        body = np.frombuffer(data, dtype="<f8", offset=8)
        if len(body) % (dim + 1) != 0:
            raise ValueError("dataset bytes disagree with declared dimension")
        rows = body.reshape(-1, dim + 1)
        return cls(features=rows[:, :dim].copy(), targets=rows[:, dim].copy())


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int
    alpha: float

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epoch count must be >= 1, got {self.epochs}")
        # alpha = 0 is a legal no-op step; only negative rates are rejected
        if self.alpha < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.alpha}")


@dataclass(frozen=True)
class AggregationConfig:
    eta: float
    m: int

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"expected update count must be >= 1, got {self.m}")


def init_dataset() -> bytes:
    """Serialized empty dataset; what the setup routine commits."""
    return b""


def sense_store(dataset: Dataset, reading: Tuple[Sequence[float], float]) -> Dataset:
    """Append one sensed (x, y) row."""
    x, y = reading
    return dataset.append(x, y)


def mse(weights: ModelWeights, dataset: Dataset) -> float:
    """Mean-squared error of the linear model on the dataset."""
    if len(dataset) == 0:
        raise EmptyDatasetError("loss undefined on an empty dataset")
    residuals = dataset.features @ weights.w + weights.b - dataset.targets
    return float(np.mean(residuals**2))


def gradient(weights: ModelWeights, dataset: Dataset) -> Tuple[np.ndarray, float]:
    """Full-batch MSE gradient: ((2/n) X^T r, (2/n) sum r) with r the residuals."""
    if len(dataset) == 0:
        raise EmptyDatasetError("gradient undefined on an empty dataset")
    if dataset.dim != weights.dim:
        raise DimensionError(f"dataset dimension {dataset.dim} != weight dimension {weights.dim}")
    n = len(dataset)
    residuals = dataset.features @ weights.w + weights.b - dataset.targets
    grad_w = (2.0 / n) * (dataset.features.T @ residuals)
    grad_b = (2.0 / n) * float(np.sum(residuals))
    return grad_w, grad_b


def train(dataset: Dataset, weights: ModelWeights, config: TrainingConfig) -> ModelWeights:
    """Fixed number of full-batch gradient steps; deterministic by construction."""
    current = ModelWeights(w=weights.w.copy(), b=weights.b)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(config.epochs):
            grad_w, grad_b = gradient(current, dataset)
            w = current.w - config.alpha * grad_w
            b = current.b - config.alpha * grad_b
            if not (np.all(np.isfinite(w)) and math.isfinite(b)):
                raise TrainingDivergenceError("weights became non-finite; lower the learning rate")
            current = ModelWeights(w=w, b=b)
    return current


def fedavg_aggregate(
    weights: ModelWeights, updates: Sequence[ModelWeights], config: AggregationConfig
) -> ModelWeights:
    """Global step toward the mean of the client updates.

        W <- W + eta * sum_i (O_i - W) / m

    With eta = 1 and m = len(updates) this is the componentwise mean.
    """
    if len(updates) == 0:
        raise ValueError("no updates to aggregate")
    for update in updates:
        if update.dim != weights.dim:
            raise DimensionError("update dimension does not match global weights")
    m = config.m
    delta_w = np.zeros_like(weights.w)
    delta_b = 0.0
    for update in updates:
        delta_w = delta_w + (update.w - weights.w)
        delta_b = delta_b + (update.b - weights.b)
    return ModelWeights(
        w=weights.w + config.eta * delta_w / m,
        b=weights.b + config.eta * delta_b / m,
    )


def pack_train_input(weights: ModelWeights, config: TrainingConfig) -> bytes:
    """Request payload for the training routine: epochs, rate, base weights."""
    return struct.pack("<Id", config.epochs, config.alpha) + weights.serialize()


def unpack_train_input(data: bytes) -> Tuple[ModelWeights, TrainingConfig]:
    header = struct.calcsize("<Id")
    if len(data) < header:
        raise ValueError("train input too short")
    epochs, alpha = struct.unpack_from("<Id", data, 0)
    return ModelWeights.deserialize(data[header:]), TrainingConfig(epochs=epochs, alpha=alpha)
