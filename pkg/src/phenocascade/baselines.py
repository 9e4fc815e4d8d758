"""Linear comparators: logistic regression and a linear SVM over trigger words.

Both models consume a binary bag-of-words built from a record's positive
trigger tokens and are trained by plain full-batch (sub)gradient descent, so
training is deterministic with no random state at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import DiseaseLabel
from .errors import ConfigError, DataFormatError

LINEAR_FORMAT_VERSION = 1

DEFAULT_LR = 0.1
DEFAULT_EPOCHS = 200
DEFAULT_L2 = 1e-4
DEFAULT_C = 1.0


def build_vocab(token_lists: Iterable[Sequence[str]]) -> tuple[str, ...]:
    """Sorted vocabulary of every token seen in training; lexicographic for determinism."""
    seen: set[str] = set()
    for tokens in token_lists:
        seen.update(tokens)
    return tuple(sorted(seen))


def featurize(tokens: Sequence[str], vocab: Sequence[str]) -> np.ndarray:
    """Binary indicator vector; duplicate tokens collapse, unseen tokens are ignored."""
    index = {token: i for i, token in enumerate(vocab)}
    vec = np.zeros(len(vocab))
    for token in tokens:
        pos = index.get(token)
        if pos is not None:
            vec[pos] = 1.0
    return vec


@dataclass(frozen=True)
class LinearModel:
    """Weights over a fixed vocabulary; score > 0 predicts `class_index[1]`."""

    kind: str
    vocab: tuple[str, ...]
    weights: np.ndarray
    bias: float
    class_index: tuple[DiseaseLabel, ...]

    def __post_init__(self) -> None:
        if self.kind not in ("logreg", "svm"):
            raise ConfigError(f"unknown linear model kind {self.kind!r}")
        if self.weights.shape != (len(self.vocab),):
            raise ConfigError("weight vector length must equal vocabulary size")
        if len(self.class_index) != 2:
            raise ConfigError("linear models are binary")

    def score(self, vector: np.ndarray) -> float:
        return float(self.weights @ vector + self.bias)


def _stack_pairs(pairs: Sequence[tuple[np.ndarray, int]], what: str) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise ConfigError(f"{what}: training set is empty")
    x = np.stack([vec for vec, _ in pairs])
    y = np.array([cls for _, cls in pairs])
    if not set(np.unique(y)) <= {0, 1}:
        raise ConfigError(f"{what}: labels must be class indices 0/1")
    return x, y


def train_logreg(
    pairs: Sequence[tuple[np.ndarray, int]],
    vocab: tuple[str, ...],
    class_index: tuple[DiseaseLabel, ...],
    lr: float = DEFAULT_LR,
    epochs: int = DEFAULT_EPOCHS,
    l2: float = DEFAULT_L2,
) -> LinearModel:
    """Full-batch gradient descent on mean log loss + 0.5*l2*||w||^2.

    Weights start at zero, so the procedure is deterministic. The bias is
    not regularized.
    """
    x, y = _stack_pairs(pairs, "logreg")
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        err = p - y
        grad_w = x.T @ err / n + l2 * w
        grad_b = float(err.mean())
        w -= lr * grad_w
        b -= lr * grad_b
    return LinearModel(kind="logreg", vocab=vocab, weights=w, bias=b, class_index=tuple(class_index))


def train_linear_svm(
    pairs: Sequence[tuple[np.ndarray, int]],
    vocab: tuple[str, ...],
    class_index: tuple[DiseaseLabel, ...],
    lr: float = DEFAULT_LR,
    epochs: int = DEFAULT_EPOCHS,
    c: float = DEFAULT_C,
) -> LinearModel:
    """Full-batch subgradient descent on 0.5*||w||^2 + c * mean hinge loss."""
    x, y = _stack_pairs(pairs, "svm")
    sign = np.where(y == 1, 1.0, -1.0)
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        margin = sign * (x @ w + b)
        active = margin < 1.0
        grad_w = w - c * (x[active].T @ sign[active]) / n
        grad_b = -c * float(sign[active].sum()) / n
        w -= lr * grad_w
        b -= lr * grad_b
    return LinearModel(kind="svm", vocab=vocab, weights=w, bias=b, class_index=tuple(class_index))


def predict_linear(model: LinearModel, vector: np.ndarray) -> tuple[DiseaseLabel, float]:
    """Sign rule: positive score picks `class_index[1]`; ties go to the first class.

    The returned confidence is a logistic squash of the score toward the
    predicted side: a ranking score, not a calibrated probability.
    """
    score = model.score(vector)
    sigma = 1.0 / (1.0 + np.exp(-score))
    if score > 0.0:
        return model.class_index[1], float(sigma)
    return model.class_index[0], float(1.0 - sigma)


def save_linear_model(path: str | Path, model: LinearModel) -> None:
    """Dump to the same .npz container layout the CNN uses; round-trips exactly."""
    np.savez(
        path,
        format_version=np.array(LINEAR_FORMAT_VERSION),
        kind=np.array(model.kind),
        meta=np.array(json.dumps({"kind": model.kind}, sort_keys=True)),
        vocab=np.array(model.vocab, dtype=np.str_),
        weights=model.weights,
        bias=np.array(model.bias),
        class_index=np.array([label.value for label in model.class_index]),
    )


def load_linear_model(path: str | Path) -> LinearModel:
    with np.load(path) as data:
        if "kind" not in data or str(data["kind"]) not in ("logreg", "svm"):
            raise DataFormatError(f"{path} is not a linear model file")
        version = int(data["format_version"])
        if version != LINEAR_FORMAT_VERSION:
            raise DataFormatError(f"unsupported linear model format version {version}")
        return LinearModel(
            kind=str(data["kind"]),
            vocab=tuple(str(v) for v in data["vocab"]),
            weights=data["weights"],
            bias=float(data["bias"]),
            class_index=tuple(DiseaseLabel(ch) for ch in data["class_index"]),
        )
