"""Reference trainable classifier and its local-training loop.

The trainable model is a two-layer feedforward network (tanh hidden layer,
softmax output) over precomputed feature vectors, stored as one flat
float64 parameter vector. Parameters carry named layer spans and a boolean
freeze mask; transfer learning freezes everything except the output layer.
All operations are pure functions of their inputs plus an explicit seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .seeding import derive_seed


class LayerSpan(NamedTuple):
    name: str
    start: int
    length: int


SPAN_NAMES = ("hidden.weight", "hidden.bias", "output.weight", "output.bias")


@dataclass(frozen=True)
class ModelSpec:
    """Shape of the reference classifier."""

    input_dim: int
    hidden_dim: int
    num_classes: int
    fine_tune_only: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("input_dim and hidden_dim must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")

    @property
    def param_count(self) -> int:
        d, h, k = self.input_dim, self.hidden_dim, self.num_classes
        return d * h + h + h * k + k

    def layer_spans(self) -> tuple[LayerSpan, ...]:
        d, h, k = self.input_dim, self.hidden_dim, self.num_classes
        lengths = (d * h, h, h * k, k)
        spans, start = [], 0
        for name, length in zip(SPAN_NAMES, lengths):
            spans.append(LayerSpan(name, start, length))
            start += length
        return tuple(spans)

    def freeze_mask(self) -> np.ndarray:
        """All-false, or true outside the output layer when fine-tuning."""
        mask = np.zeros(self.param_count, dtype=bool)
        if self.fine_tune_only:
            for span in self.layer_spans():
                if not span.name.startswith("output."):
                    mask[span.start : span.start + span.length] = True
        return mask


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 32
    local_epochs: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must not be negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ConfigError("batch_size and local_epochs must be positive")


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if not np.all(np.isfinite(feats)):
            raise InputError("example features must be finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", int(self.label))


@dataclass
class ParameterVector:
    """Flat model parameters with named layer spans and a freeze mask."""

    values: np.ndarray
    layer_spans: tuple[LayerSpan, ...]
    frozen: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.frozen is None:
            self.frozen = np.zeros(self.values.shape, dtype=bool)
        self.frozen = np.asarray(self.frozen, dtype=bool)
        self.layer_spans = tuple(LayerSpan(*s) for s in self.layer_spans)
        if self.frozen.shape != self.values.shape:
            raise ConfigError("freeze mask length must equal parameter length")
        if not np.all(np.isfinite(self.values)):
            raise InputError("parameter values must be finite")
        cursor = 0
        for span in self.layer_spans:
            if span.start != cursor or span.length < 0:
                raise ConfigError("layer spans must be contiguous and non-overlapping")
            cursor += span.length
        if cursor != self.values.size:
            raise ConfigError("layer spans must cover the full parameter vector")

    def __len__(self) -> int:
        return int(self.values.size)

    def span(self, name: str) -> LayerSpan:
        for s in self.layer_spans:
            if s.name == name:
                return s
        raise ConfigError(f"no layer span named {name!r}")

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        """Same spans and mask, new values."""
        return ParameterVector(
            np.asarray(values, dtype=np.float64), self.layer_spans, self.frozen.copy()
        )

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layer_spans, self.frozen.copy())


def _dims(params: ParameterVector) -> tuple[int, int, int]:
    """Recover (input_dim, hidden_dim, num_classes) from the span layout."""
    names = tuple(s.name for s in params.layer_spans)
    if names != SPAN_NAMES:
        raise ConfigError(f"unexpected span layout {names}, wanted {SPAN_NAMES}")
    w1, b1, w2, b2 = params.layer_spans
    h, k = b1.length, b2.length
    if h < 1 or k < 2 or w1.length % h != 0 or w2.length != h * k:
        raise ConfigError("span lengths are inconsistent with a two-layer classifier")
    return w1.length // h, h, k


def init_parameters(
    spec: ModelSpec, seed: int, pretrained: ParameterVector | None = None
) -> ParameterVector:
    """Build the initial parameter vector for a campaign.

    Pretrained values are copied verbatim; otherwise each layer is drawn
    uniformly from [-a, a] with a = sqrt(6 / (fan_in + fan_out)). The freeze
    mask follows spec.fine_tune_only.
    """
    if pretrained is not None:
        if len(pretrained) != spec.param_count:
            raise ConfigError(
                f"pretrained vector has {len(pretrained)} values, "
                f"model needs {spec.param_count}"
            )
        values = pretrained.values.copy()
    else:
        rng = np.random.default_rng(seed)
        d, h, k = spec.input_dim, spec.hidden_dim, spec.num_classes
        fans = {"hidden": (d, h), "output": (h, k)}
        chunks = []
        for span in spec.layer_spans():
            fan_in, fan_out = fans[span.name.split(".")[0]]
            a = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-a, a, size=span.length))
        values = np.concatenate(chunks)
    return ParameterVector(values, spec.layer_spans(), spec.freeze_mask())


def _unpack(params: ParameterVector):
    d, h, k = _dims(params)
    v = params.values
    i = 0
    w1 = v[i : i + d * h].reshape(d, h); i += d * h
    b1 = v[i : i + h]; i += h
    w2 = v[i : i + h * k].reshape(h, k); i += h * k
    b2 = v[i : i + k]
    return w1, b1, w2, b2


def _stack_batch(params: ParameterVector, batch: Sequence[LabeledExample]):
    if len(batch) == 0:
        raise InputError("batch must be non-empty")
    d, _, k = _dims(params)
    feats = np.stack([ex.features for ex in batch])
    labels = np.array([ex.label for ex in batch], dtype=np.int64)
    if feats.ndim != 2 or feats.shape[1] != d:
        raise InputError(f"feature dim {feats.shape[-1]} does not match model input_dim {d}")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError("label out of range")
    return feats, labels


def _forward(params: ParameterVector, feats: np.ndarray):
    w1, b1, w2, b2 = _unpack(params)
    hidden = np.tanh(feats @ w1 + b1)
    logits = hidden @ w2 + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    return hidden, probs, log_probs


def forward_loss(
    params: ParameterVector, batch: Sequence[LabeledExample]
) -> tuple[float, float]:
    """Mean cross-entropy and argmax accuracy over a batch."""
    feats, labels = _stack_batch(params, batch)
    _, probs, log_probs = _forward(params, feats)
    n = feats.shape[0]
    loss = float(-log_probs[np.arange(n), labels].mean())
    accuracy = float((probs.argmax(axis=1) == labels).mean())
    return loss, accuracy


def gradient(params: ParameterVector, batch: Sequence[LabeledExample]) -> np.ndarray:
    """Mean cross-entropy gradient; frozen entries are computed, not masked."""
    feats, labels = _stack_batch(params, batch)
    grad, _ = _backward(params, feats, labels, head_only=False)
    return grad


def _backward(
    params: ParameterVector, feats: np.ndarray, labels: np.ndarray, head_only: bool
):
    """Loss gradient w.r.t. the flat parameter vector, plus the batch loss.

    head_only skips backprop into the hidden layer (its slots stay zero);
    valid only when the hidden layer is frozen, where the skipped entries
    are discarded by the optimizer anyway.
    """
    d, h, k = _dims(params)
    n = feats.shape[0]
    hidden, probs, log_probs = _forward(params, feats)
    loss = float(-log_probs[np.arange(n), labels].mean())

    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grad = np.zeros_like(params.values)
    grad[d * h + h : d * h + h + h * k] = (hidden.T @ dlogits).ravel()
    grad[d * h + h + h * k :] = dlogits.sum(axis=0)
    if not head_only:
        w2 = params.values[d * h + h : d * h + h + h * k].reshape(h, k)
        dpre = (dlogits @ w2.T) * (1.0 - hidden * hidden)
        grad[: d * h] = (feats.T @ dpre).ravel()
        grad[d * h : d * h + h] = dpre.sum(axis=0)
    return grad, loss


def sgd_step(
    params: ParameterVector,
    velocity: np.ndarray,
    grad: np.ndarray,
    hp: Hyperparameters,
) -> tuple[ParameterVector, np.ndarray]:
    """One momentum-SGD update honoring the freeze mask.

    velocity' = momentum * velocity + grad, zeroed at frozen indices;
    frozen parameters are carried over bit-exactly.
    """
    velocity = np.asarray(velocity, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if velocity.shape != params.values.shape or grad.shape != params.values.shape:
        raise InputError("velocity/gradient length must match parameters")
    new_velocity = hp.momentum * velocity + grad
    new_velocity[params.frozen] = 0.0
    stepped = params.values - hp.learning_rate * new_velocity
    new_values = np.where(params.frozen, params.values, stepped)
    return params.with_values(new_values), new_velocity


def local_train(
    params: ParameterVector,
    data: Sequence[LabeledExample],
    hp: Hyperparameters,
    seed: int,
) -> tuple[ParameterVector, int, float]:
    """Run local_epochs of shuffled minibatch SGD; returns (params', n, mean loss).

    The shuffle order is a pure function of seed; velocity starts at zero on
    every call. The final partial batch is trained on as-is. The reported
    loss is the example-weighted mean of pre-update batch losses.
    """
    if len(data) == 0:
        raise InputError("local training requires a non-empty dataset")
    feats, labels = _stack_batch(params, data)

    # Skipping hidden-layer backprop is exact when that whole layer is frozen.
    d, h, _ = _dims(params)
    head_only = bool(params.frozen[: d * h + h].all())

    rng = np.random.default_rng(seed)
    working = params.with_values(params.values.copy())
    velocity = np.zeros_like(params.values)
    n = feats.shape[0]
    loss_sum = 0.0
    for _ in range(hp.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            grad, batch_loss = _backward(working, feats[idx], labels[idx], head_only)
            loss_sum += batch_loss * idx.size
            working, velocity = sgd_step(working, velocity, grad, hp)
    mean_loss = loss_sum / (n * hp.local_epochs)
    return working, n, float(mean_loss)


def save_weights(path, values: np.ndarray) -> None:
    """Write a flat weights file: u32 LE value count, then float64 LE values."""
    arr = np.asarray(values, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", arr.size))
        fh.write(arr.astype("<f8").tobytes())


def load_pretrained(path, spec: ModelSpec) -> ParameterVector:
    """Load a weights file and validate its length against the model spec."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"weights file not found: {path}")
    if len(raw) < 4:
        raise ConfigError(f"weights file {path} is truncated")
    (count,) = struct.unpack("<I", raw[:4])
    body = raw[4:]
    if len(body) != count * 8:
        raise ConfigError(
            f"weights file {path} declares {count} values but holds {len(body)} payload bytes"
        )
    if count != spec.param_count:
        raise ConfigError(
            f"weights file {path} holds {count} values, model needs {spec.param_count}"
        )
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return ParameterVector(values, spec.layer_spans(), spec.freeze_mask())


def round_seed(base_seed: int, round_no: int) -> int:
    """Per-round local-training seed for a client."""
    return derive_seed(base_seed, round_no)
