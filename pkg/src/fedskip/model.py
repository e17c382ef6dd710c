"""Small differentiable classifiers with exact gradients.

Two families share one flat parameter layout so that every server step can
treat models as plain vectors:

* ``linear-softmax``: ``W (C x d)`` row-major, then ``b (C)``.
* ``mlp-1hidden``: ``W1 (h x d)``, ``b1 (h)``, ``W2 (C x h)``, ``b2 (C)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

FAMILIES = ("linear-softmax", "mlp-1hidden")
ACTIVATIONS = ("sigmoid", "relu")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "sigmoid"

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        if self.family == "mlp-1hidden":
            if self.hidden_dim < 1:
                raise ValueError("mlp-1hidden needs hidden_dim >= 1")
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def num_params(self) -> int:
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.family == "linear-softmax":
            return c * d + c
        return h * d + h + c * h + c

    def bias_mask(self) -> np.ndarray:
        """Boolean mask over the flat layout marking bias entries."""
        mask = np.zeros(self.num_params, dtype=bool)
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.family == "linear-softmax":
            mask[c * d:] = True
        else:
            mask[h * d:h * d + h] = True
            mask[h * d + h + c * h:] = True
        return mask


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Immutable, finite parameter vector tied to a :class:`ModelSpec`."""

    values: np.ndarray
    spec: ModelSpec

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if arr.size != self.spec.num_params:
            raise ValueError(
                f"expected {self.spec.num_params} parameters, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("parameter vector contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.size

    def _check(self, other: ParamVector) -> None:
        if other.spec != self.spec:
            raise ValueError("parameter layouts differ")

    def __add__(self, other: ParamVector) -> ParamVector:
        self._check(other)
        return ParamVector(self.values + other.values, self.spec)

    def __sub__(self, other: ParamVector) -> ParamVector:
        self._check(other)
        return ParamVector(self.values - other.values, self.spec)

    def __mul__(self, scale: float) -> ParamVector:
        return ParamVector(self.values * float(scale), self.spec)

    __rmul__ = __mul__

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash((self.spec, self.values.tobytes()))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @classmethod
    def zeros(cls, spec: ModelSpec) -> ParamVector:
        return cls(np.zeros(spec.num_params), spec)


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Batch:
    """A non-empty mini-batch stored as a feature matrix and a label vector."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("batch must be a non-empty 2-d feature matrix")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must match the number of examples")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> Batch:
        if not examples:
            raise ValueError("batch must be non-empty")
        dims = {np.shape(ex.features) for ex in examples}
        if len(dims) != 1:
            raise ValueError("examples do not share input_dim")
        X = np.stack([np.asarray(ex.features, dtype=np.float64) for ex in examples])
        y = np.array([int(ex.label) for ex in examples], dtype=np.int64)
        return cls(X, y)


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Zero-mean normal weights with std ``1/sqrt(fan_in)``; zero biases."""
    rng = np.random.default_rng(seed)
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    if spec.family == "linear-softmax":
        parts = [rng.normal(0.0, 1.0 / math.sqrt(d), size=c * d), np.zeros(c)]
    else:
        parts = [
            rng.normal(0.0, 1.0 / math.sqrt(d), size=h * d),
            np.zeros(h),
            rng.normal(0.0, 1.0 / math.sqrt(h), size=c * h),
            np.zeros(c),
        ]
    return ParamVector(np.concatenate(parts), spec)


def _unpack(spec: ModelSpec, w: np.ndarray):
    d, c, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    if spec.family == "linear-softmax":
        return w[:c * d].reshape(c, d), w[c * d:]
    i = 0
    W1 = w[i:i + h * d].reshape(h, d)
    i += h * d
    b1 = w[i:i + h]
    i += h
    W2 = w[i:i + c * h].reshape(c, h)
    i += c * h
    return W1, b1, W2, w[i:]


def _check_inputs(spec: ModelSpec, w: np.ndarray, X: np.ndarray) -> None:
    if w.shape != (spec.num_params,):
        raise ValueError(
            f"parameter length {w.shape} does not match spec ({spec.num_params},)")
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(
            f"feature dimension {X.shape[-1]} does not match input_dim {spec.input_dim}")


def _activate(spec: ModelSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.maximum(z, 0.0)


def logits_array(spec: ModelSpec, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    _check_inputs(spec, w, X)
    if spec.family == "linear-softmax":
        W, b = _unpack(spec, w)
        return X @ W.T + b
    W1, b1, W2, b2 = _unpack(spec, w)
    return _activate(spec, X @ W1.T + b1) @ W2.T + b2


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(spec: ModelSpec, w: np.ndarray, X: np.ndarray,
                  y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient on raw arrays (hot path)."""
    _check_inputs(spec, w, X)
    n = X.shape[0]
    rows = np.arange(n)
    if spec.family == "linear-softmax":
        W, b = _unpack(spec, w)
        logp = _log_softmax(X @ W.T + b)
        delta = np.exp(logp)
        delta[rows, y] -= 1.0
        delta /= n
        grad = np.concatenate([(delta.T @ X).ravel(), delta.sum(axis=0)])
        return float(-logp[rows, y].mean()), grad

    W1, b1, W2, b2 = _unpack(spec, w)
    pre = X @ W1.T + b1
    hid = _activate(spec, pre)
    logp = _log_softmax(hid @ W2.T + b2)
    delta = np.exp(logp)
    delta[rows, y] -= 1.0
    delta /= n
    back = delta @ W2
    if spec.activation == "sigmoid":
        back = back * hid * (1.0 - hid)
    else:
        back = back * (pre > 0.0)
    grad = np.concatenate([
        (back.T @ X).ravel(), back.sum(axis=0),
        (delta.T @ hid).ravel(), delta.sum(axis=0),
    ])
    return float(-logp[rows, y].mean()), grad


def loss(spec: ModelSpec, params: ParamVector, batch: Batch) -> float:
    """Mean negative log-likelihood of the true class over ``batch``."""
    logp = _log_softmax(logits_array(spec, params.values, batch.X))
    return float(-logp[np.arange(len(batch)), batch.y].mean())


def gradient(spec: ModelSpec, params: ParamVector, batch: Batch) -> ParamVector:
    _, grad = loss_and_grad(spec, params.values, batch.X, batch.y)
    return ParamVector(grad, spec)


def predict(spec: ModelSpec, params: ParamVector, X: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class.
    return np.argmax(logits_array(spec, params.values, np.asarray(X, dtype=np.float64)), axis=1)


def evaluate_accuracy(spec: ModelSpec, params: ParamVector, X: np.ndarray,
                      y: np.ndarray) -> float:
    """Top-1 accuracy of ``params`` on the labelled set ``(X, y)``."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    return float(np.mean(predict(spec, params, X) == y))
