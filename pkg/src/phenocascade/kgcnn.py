"""Dual-channel convolutional classifier over trigger words and linked concepts.

Each channel (trigger-phrase word vectors; concept vectors) runs through its
own one-dimensional convolution bank with ReLU and a masked max-pool; the two
pooled vectors are concatenated and fed through a fully connected layer,
dropout, ReLU, and a softmax output. Everything (forward, backward, Adam)
is implemented directly on numpy arrays in float64.

Input vectors are frozen: gradients stop at the convolution filters, matching
pre-trained embeddings that are not fine-tuned.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import DiseaseLabel
from .embeddings import EmbeddingTable
from .errors import ConfigError, DataFormatError, InternalError

logger = logging.getLogger(__name__)

LOSS_EPS = 1e-12
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and optimizer settings; defaults follow the reference setup."""

    filters: int = 256
    kernel: int = 5
    hidden: int = 128
    dropout_keep: float = 0.8
    lr: float = 0.001
    batch: int = 64
    epochs: int = 30
    max_words: int = 64
    max_cuis: int = 128
    classes: int = 2
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if min(self.filters, self.kernel, self.hidden, self.batch, self.epochs) < 1:
            raise ConfigError("filters, kernel, hidden, batch, and epochs must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError("dropout_keep must be in (0, 1]")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.classes < 2:
            raise ConfigError("classes must be at least 2")
        if self.max_words < self.kernel or self.max_cuis < self.kernel:
            raise ConfigError("max_words and max_cuis must be at least the kernel size")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class KgCnnInput:
    """One record's two channels, embedded and zero-padded to fixed lengths.

    `word_len`/`cui_len` count the real (non-pad) rows; vectors are bound
    eagerly because embeddings are frozen, so the pad mask is just the row
    index range.
    """

    word_vecs: np.ndarray
    word_len: int
    cui_vecs: np.ndarray
    cui_len: int

    def __post_init__(self) -> None:
        if not 0 <= self.word_len <= self.word_vecs.shape[0]:
            raise InternalError("word_len outside the padded word matrix")
        if not 0 <= self.cui_len <= self.cui_vecs.shape[0]:
            raise InternalError("cui_len outside the padded concept matrix")
        if np.any(self.word_vecs[self.word_len :]) or np.any(self.cui_vecs[self.cui_len :]):
            raise InternalError("padding rows past the real content must be zero")


def encode_input(
    words: Sequence[str],
    cuis: Sequence[str],
    word_table: EmbeddingTable,
    cui_table: EmbeddingTable,
    config: ModelConfig,
) -> KgCnnInput:
    """Embed, truncate to the configured maxima, and zero-pad both channels."""

    def channel(keys: Sequence[str], table: EmbeddingTable, max_len: int) -> tuple[np.ndarray, int]:
        kept = list(keys)[:max_len]
        mat = np.zeros((max_len, table.dim), dtype=np.float64)
        for i, key in enumerate(kept):
            mat[i] = table.lookup(key)
        return mat, len(kept)

    word_vecs, word_len = channel(words, word_table, config.max_words)
    cui_vecs, cui_len = channel(cuis, cui_table, config.max_cuis)
    return KgCnnInput(word_vecs=word_vecs, word_len=word_len, cui_vecs=cui_vecs, cui_len=cui_len)


@dataclass
class KgCnnModel:
    """Parameter arrays plus the config and the label order of the softmax."""

    word_filters: np.ndarray
    word_bias: np.ndarray
    cui_filters: np.ndarray
    cui_bias: np.ndarray
    fc1_weight: np.ndarray
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray
    fc2_bias: np.ndarray
    config: ModelConfig
    class_index: tuple[DiseaseLabel, ...]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live views of every trainable array, keyed by stable names."""
        return {
            "word_filters": self.word_filters,
            "word_bias": self.word_bias,
            "cui_filters": self.cui_filters,
            "cui_bias": self.cui_bias,
            "fc1_weight": self.fc1_weight,
            "fc1_bias": self.fc1_bias,
            "fc2_weight": self.fc2_weight,
            "fc2_bias": self.fc2_bias,
        }


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(
    config: ModelConfig,
    word_dim: int,
    cui_dim: int,
    class_index: tuple[DiseaseLabel, ...],
    rng: np.random.Generator,
) -> KgCnnModel:
    """Glorot-uniform filters and weights, zero biases, fixed draw order."""
    if len(class_index) != config.classes:
        raise ConfigError(f"class_index has {len(class_index)} labels, config expects {config.classes}")
    f, k, h, c = config.filters, config.kernel, config.hidden, config.classes
    return KgCnnModel(
        word_filters=_glorot(rng, (f, k, word_dim), k * word_dim, f),
        word_bias=np.zeros(f),
        cui_filters=_glorot(rng, (f, k, cui_dim), k * cui_dim, f),
        cui_bias=np.zeros(f),
        fc1_weight=_glorot(rng, (h, 2 * f), 2 * f, h),
        fc1_bias=np.zeros(h),
        fc2_weight=_glorot(rng, (c, h), h, c),
        fc2_bias=np.zeros(c),
        config=config,
        class_index=tuple(class_index),
    )


def _conv_channel(
    stacked: np.ndarray, lengths: np.ndarray, filters: np.ndarray, bias: np.ndarray, kernel: int
) -> dict:
    """Valid 1-D convolution + ReLU + masked max-pool for one channel.

    A pooling position is kept iff its window lies entirely within the row's
    real content, so padding never reaches the pooled vector and appending
    padding cannot change the output. Rows with fewer real entries than the
    kernel pool to the zero vector. Trailing all-pad rows are trimmed before
    the GEMM, so the arithmetic itself, not just the masked result, depends only
    on batch content, never on the configured padding length.
    """
    batch, length, dim = stacked.shape
    if length < kernel:
        raise InternalError(f"channel padded length {length} is shorter than kernel {kernel}")
    content = int(lengths.max())
    width = max(content, kernel)
    if width != length:
        resized = np.zeros((batch, width, dim), dtype=stacked.dtype)
        resized[:, :content, :] = stacked[:, :content, :]
        stacked = resized
    n_filters = filters.shape[0]
    # (B, T, D, k) view -> (B, T, k, D) copy -> one GEMM against (F, k*D)
    windows = sliding_window_view(stacked, kernel, axis=1)
    windows2d = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(batch, -1, kernel * stacked.shape[2])
    conv = windows2d @ filters.reshape(n_filters, -1).T + bias
    act = np.maximum(conv, 0.0)

    positions = np.arange(conv.shape[1])
    valid = positions[None, :] <= (lengths - kernel)[:, None]
    masked = np.where(valid[:, :, None], act, -np.inf)
    pooled = masked.max(axis=1)
    # all-masked rows give an all--inf max and argmax 0; both are neutralized
    # here and in the backward pass via `empty`
    argmax = masked.argmax(axis=1)
    empty = lengths < kernel
    pooled[empty] = 0.0
    return {
        "windows2d": windows2d,
        "conv": conv,
        "pooled": pooled,
        "argmax": argmax,
        "empty": empty,
    }


def _stack_inputs(batch: Sequence[KgCnnInput]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    word_shapes = {inp.word_vecs.shape for inp in batch}
    cui_shapes = {inp.cui_vecs.shape for inp in batch}
    if len(word_shapes) != 1 or len(cui_shapes) != 1:
        raise InternalError("batch mixes inputs padded to different shapes")
    words = np.stack([inp.word_vecs for inp in batch])
    cuis = np.stack([inp.cui_vecs for inp in batch])
    word_lens = np.array([inp.word_len for inp in batch])
    cui_lens = np.array([inp.cui_len for inp in batch])
    return words, cuis, word_lens, cui_lens


def forward(
    model: KgCnnModel,
    batch: Sequence[KgCnnInput],
    dropout_on: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Class probabilities (batch × classes) plus cached activations for backward."""
    if not batch:
        raise InternalError("forward called with an empty batch")
    if dropout_on and rng is None:
        raise InternalError("dropout requires a random generator")
    words, cuis, word_lens, cui_lens = _stack_inputs(batch)
    kernel = model.config.kernel
    word_ch = _conv_channel(words, word_lens, model.word_filters, model.word_bias, kernel)
    cui_ch = _conv_channel(cuis, cui_lens, model.cui_filters, model.cui_bias, kernel)

    concat = np.concatenate([word_ch["pooled"], cui_ch["pooled"]], axis=1)
    z1 = concat @ model.fc1_weight.T + model.fc1_bias
    if dropout_on and model.config.dropout_keep < 1.0:
        keep = model.config.dropout_keep
        drop_scale = (rng.random(z1.shape) < keep).astype(np.float64) / keep
    else:
        drop_scale = np.ones_like(z1)
    dropped = z1 * drop_scale
    hidden = np.maximum(dropped, 0.0)
    z2 = hidden @ model.fc2_weight.T + model.fc2_bias

    shifted = z2 - z2.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)

    cache = {
        "word": word_ch,
        "cui": cui_ch,
        "concat": concat,
        "drop_scale": drop_scale,
        "dropped": dropped,
        "hidden": hidden,
        "probs": probs,
    }
    return probs, cache


def loss(probs: np.ndarray, gold: np.ndarray) -> float:
    """Mean softmax cross entropy, with probabilities clamped at 1e-12."""
    picked = probs[np.arange(len(gold)), gold]
    return float(-np.log(np.maximum(picked, LOSS_EPS)).mean())


def _channel_backward(channel: dict, dpooled: np.ndarray, filters: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of one channel's filter bank and bias from pooled-output grads."""
    conv = channel["conv"]
    batch, _, n_filters = conv.shape
    dpooled = np.where(channel["empty"][:, None], 0.0, dpooled)
    dconv = np.zeros_like(conv)
    rows = np.repeat(np.arange(batch), n_filters)
    cols = np.tile(np.arange(n_filters), batch)
    pos = channel["argmax"].reshape(-1)
    gate = conv[rows, pos, cols] > 0.0
    dconv[rows, pos, cols] = dpooled.reshape(-1) * gate
    dconv2d = dconv.reshape(-1, n_filters)
    windows2d = channel["windows2d"].reshape(dconv2d.shape[0], -1)
    dfilters = (dconv2d.T @ windows2d).reshape(n_filters, -1, filters.shape[2])
    dbias = dconv2d.sum(axis=0)
    return dfilters, dbias


def backward(model: KgCnnModel, cache: dict, gold: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross entropy for every parameter array.

    Input vectors are constants, so no gradient flows past the filter banks.
    """
    probs = cache["probs"]
    batch = len(gold)
    dz2 = probs.copy()
    dz2[np.arange(batch), gold] -= 1.0
    dz2 /= batch

    dfc2_weight = dz2.T @ cache["hidden"]
    dfc2_bias = dz2.sum(axis=0)
    dhidden = dz2 @ model.fc2_weight
    ddropped = dhidden * (cache["dropped"] > 0.0)
    dz1 = ddropped * cache["drop_scale"]
    dfc1_weight = dz1.T @ cache["concat"]
    dfc1_bias = dz1.sum(axis=0)
    dconcat = dz1 @ model.fc1_weight

    n_filters = model.config.filters
    dword_filters, dword_bias = _channel_backward(cache["word"], dconcat[:, :n_filters], model.word_filters)
    dcui_filters, dcui_bias = _channel_backward(cache["cui"], dconcat[:, n_filters:], model.cui_filters)
    return {
        "word_filters": dword_filters,
        "word_bias": dword_bias,
        "cui_filters": dcui_filters,
        "cui_bias": dcui_bias,
        "fc1_weight": dfc1_weight,
        "fc1_bias": dfc1_bias,
        "fc2_weight": dfc2_weight,
        "fc2_bias": dfc2_bias,
    }


@dataclass
class OptimizerState:
    """Adam moment accumulators, keyed like `KgCnnModel.parameters()`."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_parameters(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.items()},
            v={name: np.zeros_like(arr) for name, arr in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    config: ModelConfig,
) -> None:
    """One bias-corrected Adam update, applied to the parameter arrays in place."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, grad in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        params[name] -= config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def train(
    examples: Sequence[tuple[KgCnnInput, int]],
    config: ModelConfig,
    class_index: tuple[DiseaseLabel, ...],
    on_epoch: Callable[[int, float], None] | None = None,
) -> KgCnnModel:
    """Train a new model; fully deterministic for a fixed config seed.

    One generator drives initialization, epoch shuffling, and dropout masks
    in a fixed order. `on_epoch` receives (epoch, mean training loss).
    """
    if not examples:
        raise ConfigError("training set is empty")
    gold_set = {g for _, g in examples}
    if not gold_set <= set(range(config.classes)):
        raise ConfigError(f"gold classes {sorted(gold_set)} outside 0..{config.classes - 1}")
    if len(gold_set) < 2:
        logger.warning("training set has a single class (%s); model will be degenerate", gold_set)

    rng = np.random.default_rng(config.seed)
    word_dim = examples[0][0].word_vecs.shape[1]
    cui_dim = examples[0][0].cui_vecs.shape[1]
    model = init_model(config, word_dim, cui_dim, class_index, rng)
    state = OptimizerState.for_parameters(model.parameters())

    order = np.arange(len(examples))
    for epoch in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), config.batch):
            chunk = order[start : start + config.batch]
            batch = [examples[i][0] for i in chunk]
            gold = np.array([examples[i][1] for i in chunk])
            probs, cache = forward(model, batch, dropout_on=True, rng=rng)
            total += loss(probs, gold) * len(chunk)
            grads = backward(model, cache, gold)
            adam_step(model.parameters(), grads, state, config)
        if on_epoch is not None:
            on_epoch(epoch, total / len(order))
    return model


def predict(model: KgCnnModel, inp: KgCnnInput) -> tuple[DiseaseLabel, float]:
    """Most probable label and its probability; ties go to the first class."""
    probs, _ = forward(model, [inp])
    idx = int(np.argmax(probs[0]))
    return model.class_index[idx], float(probs[0, idx])


def predict_batch(model: KgCnnModel, inputs: Sequence[KgCnnInput]) -> list[tuple[DiseaseLabel, float]]:
    """Batched `predict`: same labels, probabilities equal to within GEMM
    reassociation (the last couple of float bits), one forward per chunk."""
    out: list[tuple[DiseaseLabel, float]] = []
    for start in range(0, len(inputs), model.config.batch):
        probs, _ = forward(model, inputs[start : start + model.config.batch])
        for row in probs:
            idx = int(np.argmax(row))
            out.append((model.class_index[idx], float(row[idx])))
    return out


def save_model(path: str | Path, model: KgCnnModel) -> None:
    """Dump parameters and config to a .npz archive; round-trips bit-exactly."""
    np.savez(
        path,
        format_version=np.array(MODEL_FORMAT_VERSION),
        kind=np.array("kgcnn"),
        config=np.array(model.config.to_json()),
        class_index=np.array([label.value for label in model.class_index]),
        **model.parameters(),
    )


def load_model(path: str | Path) -> KgCnnModel:
    """Load a model saved by `save_model`."""
    with np.load(path) as data:
        if "kind" not in data or str(data["kind"]) != "kgcnn":
            raise DataFormatError(f"{path} is not a dual-channel model file")
        version = int(data["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise DataFormatError(f"unsupported model format version {version}")
        config = ModelConfig.from_json(str(data["config"]))
        class_index = tuple(DiseaseLabel(ch) for ch in data["class_index"])
        return KgCnnModel(
            word_filters=data["word_filters"],
            word_bias=data["word_bias"],
            cui_filters=data["cui_filters"],
            cui_bias=data["cui_bias"],
            fc1_weight=data["fc1_weight"],
            fc1_bias=data["fc1_bias"],
            fc2_weight=data["fc2_weight"],
            fc2_bias=data["fc2_bias"],
            config=config,
            class_index=class_index,
        )


def pad_variant(config: ModelConfig, max_words: int, max_cuis: int | None = None) -> ModelConfig:
    """The same config with different padded lengths, for pad-invariance checks."""
    return replace(config, max_words=max_words, max_cuis=max_cuis if max_cuis is not None else config.max_cuis)
