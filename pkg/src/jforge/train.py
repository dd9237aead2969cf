"""Minibatch gradient-descent training with backpropagation.

Losses: cross-entropy over a final Softmax layer (classifiers) and mean
squared error (scalar-output nets such as the AND demo). Gradients are
means over the batch; a run is fully determined by the architecture,
dataset, config, and seeds.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DivergenceError, ValidationError
from .network import (
    Activation,
    AvgPool,
    Conv2D,
    Dense,
    Flatten,
    MaxPool,
    Network,
    Softmax,
    activation_derivative,
    apply_layer,
)

LOSSES = ("cross_entropy", "mean_squared_error")


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 500
    seed: int = 0
    loss: str = "cross_entropy"

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning rate must be finite and > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")


@dataclass
class LabeledDataset:
    """Flat feature rows in [0, 1] with integer class labels."""

    features: np.ndarray  # (n, M)
    labels: np.ndarray  # (n,)
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels must align with feature rows")
        if self.class_count < 1:
            raise DataError(f"class count must be >= 1, got {self.class_count}")
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        if len(self):
            if not np.isfinite(self.features).all():
                raise DataError("features must be finite")
            if self.features.min() < 0.0 or self.features.max() > 1.0:
                raise DataError("features must lie in [0, 1]")

    def __len__(self) -> int:
        return self.features.shape[0]

    def sample(self, i: int, input_shape: tuple) -> np.ndarray:
        return self.features[i].reshape(input_shape)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float | None = None


def round_half_up(value: float) -> int:
    """0.5 rounds to 1; used only when judging truth-table outputs."""
    return int(math.floor(value + 0.5))


def and_dataset(count: int = 1000) -> LabeledDataset:
    """The four AND corners repeated count/4 times each."""
    corners = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    labels = np.array([0, 0, 0, 1])
    reps = count // 4
    features = np.tile(corners, (reps, 1))[:count]
    y = np.tile(labels, reps)[:count]
    return LabeledDataset(features, y, 2)


def init_params(arch: Network, seed: int) -> Network:
    """Fresh network with layer weights drawn uniform in
    +-sqrt(6 / (fan_in + fan_out)) and zero biases; deterministic in seed."""
    problems = arch.validate()
    if problems:
        raise ValidationError("; ".join(problems))
    net = arch.copy()
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        if isinstance(layer, Dense):
            out, inp = layer.weights.shape
            limit = math.sqrt(6.0 / (inp + out))
            layer.weights = rng.uniform(-limit, limit, size=(out, inp))
            layer.bias = np.zeros(out)
        elif isinstance(layer, Conv2D):
            count, channels, kh, kw = layer.kernels.shape
            fan_in = channels * kh * kw
            fan_out = count * kh * kw
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            layer.kernels = rng.uniform(-limit, limit, size=(count, channels, kh, kw))
            layer.bias = np.zeros(count)
    net.ensure_valid()
    return net


def _forward_batch(net: Network, flat: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-layer inputs plus the final output for a (B, M) feature block."""
    current = flat.reshape((flat.shape[0],) + net.input_shape)
    inputs = []
    for layer in net.layers:
        inputs.append(current)
        current = apply_layer(layer, current, batched=True)
    return inputs, current


def _targets(labels: np.ndarray, out_dim: int) -> np.ndarray:
    if out_dim == 1:
        return labels.astype(float).reshape(-1, 1)
    onehot = np.zeros((labels.size, out_dim))
    onehot[np.arange(labels.size), labels] = 1.0
    return onehot


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int) -> np.ndarray:
    c, h, w = shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros(shape)
    cols = cols.reshape(c, kh, kw, oh, ow)
    for dh in range(kh):
        for dw in range(kw):
            out[:, dh:dh + stride * oh:stride, dw:dw + stride * ow:stride] += cols[:, dh, dw]
    return out


def _conv_backward(layer: Conv2D, xin: np.ndarray, grad: np.ndarray):
    from .network import _im2col

    count = layer.kernels.shape[0]
    kmat = layer.kernels.reshape(count, -1)
    _, _, kh, kw = layer.kernels.shape
    g_kernels = np.zeros_like(layer.kernels)
    g_bias = grad.sum(axis=(0, 2, 3))
    g_input = np.zeros_like(xin)
    for b in range(xin.shape[0]):
        gflat = grad[b].reshape(count, -1)
        cols = _im2col(xin[b], kh, kw, layer.stride)
        g_kernels += (gflat @ cols.T).reshape(layer.kernels.shape)
        g_input[b] = _col2im(kmat.T @ gflat, xin[b].shape, kh, kw, layer.stride)
    return g_kernels, g_bias, g_input


def _maxpool_backward(window: int, xin: np.ndarray, grad: np.ndarray) -> np.ndarray:
    from .jacobian import _pool_winner_rows

    g_input = np.zeros_like(xin)
    for b in range(xin.shape[0]):
        rows = _pool_winner_rows(xin[b], window)
        flat = np.zeros(xin[b].size)
        flat[rows] = grad[b].reshape(-1)
        g_input[b] = flat.reshape(xin[b].shape)
    return g_input


def _gradients_and_loss(net: Network, features: np.ndarray, labels: np.ndarray,
                        loss: str):
    """Mean-over-batch parameter gradients plus the batch loss."""
    if features.shape[0] == 0:
        raise DataError("batch must be non-empty")
    shapes = net.ensure_valid()
    out_dim = int(np.prod(shapes[-1]))
    if labels.min() < 0 or (out_dim > 1 and labels.max() >= out_dim):
        raise DataError(f"labels must lie in [0, {out_dim})")
    if out_dim == 1 and labels.max() > 1:
        raise DataError("scalar-output networks take 0/1 labels")
    batch = features.shape[0]
    inputs, output = _forward_batch(net, features)
    layers = net.layers

    if loss == "cross_entropy":
        if not isinstance(layers[-1], Softmax):
            raise ConfigError("cross_entropy requires a final Softmax layer")
        with np.errstate(divide="ignore"):
            picked = output[np.arange(batch), labels]
            loss_value = float(-np.log(picked).mean())
        # exact gradient at the logits for softmax + cross-entropy
        delta = (output - _targets(labels, out_dim)) / batch
        stop = len(layers) - 1
    elif loss == "mean_squared_error":
        err = output - _targets(labels, out_dim)
        loss_value = float((err * err).sum(axis=-1).mean())
        delta = 2.0 * err / batch
        stop = len(layers)
    else:
        raise ConfigError(f"loss must be one of {LOSSES}, got {loss!r}")

    grads: list[dict | None] = [None] * len(layers)
    for k in range(stop - 1, -1, -1):
        layer = layers[k]
        xin = inputs[k]
        if isinstance(layer, Dense):
            grads[k] = {"weights": delta.T @ xin, "bias": delta.sum(axis=0)}
            delta = delta @ layer.weights
        elif isinstance(layer, Activation):
            delta = delta * activation_derivative(layer.kind, xin)
        elif isinstance(layer, Softmax):
            y = apply_layer(layer, xin, batched=True)
            delta = y * (delta - (delta * y).sum(axis=-1, keepdims=True))
        elif isinstance(layer, Flatten):
            delta = delta.reshape(xin.shape)
        elif isinstance(layer, Conv2D):
            g_k, g_b, delta = _conv_backward(layer, xin, delta)
            grads[k] = {"kernels": g_k, "bias": g_b}
        elif isinstance(layer, MaxPool):
            delta = _maxpool_backward(layer.window, xin, delta)
        elif isinstance(layer, AvgPool):
            win = layer.window
            spread = np.repeat(np.repeat(delta, win, axis=2), win, axis=3)
            delta = spread / (win * win)
    return grads, loss_value


def backprop_gradients(net: Network, features, labels, loss: str = "cross_entropy"):
    """One gradient dict per parameterized layer (None elsewhere)."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    grads, _ = _gradients_and_loss(net, features, labels, loss)
    return grads


def batch_loss(net: Network, features, labels, loss: str = "cross_entropy") -> float:
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=int)
    _, value = _gradients_and_loss(net, features, labels, loss)
    return value


def _apply_gradients(net: Network, grads, learning_rate: float) -> None:
    for layer, grad in zip(net.layers, grads):
        if grad is None:
            continue
        if isinstance(layer, Dense):
            layer.weights -= learning_rate * grad["weights"]
            layer.bias -= learning_rate * grad["bias"]
        elif isinstance(layer, Conv2D):
            layer.kernels -= learning_rate * grad["kernels"]
            layer.bias -= learning_rate * grad["bias"]


def accuracy(net: Network, dataset: LabeledDataset, chunk: int = 1024) -> float:
    """Fraction of samples whose argmax output matches the label."""
    if len(dataset) == 0:
        raise DataError("dataset must be non-empty")
    hits = 0
    for start in range(0, len(dataset), chunk):
        block = dataset.features[start:start + chunk]
        _, out = _forward_batch(net, block)
        hits += int((out.argmax(axis=-1) == dataset.labels[start:start + chunk]).sum())
    return hits / len(dataset)


def sgd_train(net: Network, dataset: LabeledDataset, config: TrainConfig,
              eval_dataset: LabeledDataset | None = None):
    """Plain SGD over reshuffled minibatches.

    Returns a trained copy of ``net`` (the input is never mutated) plus
    one EpochStats per epoch.
    """
    net.ensure_valid()
    if len(dataset) == 0:
        raise DataError("dataset must be non-empty")
    if config.batch_size > len(dataset):
        raise DataError(
            f"batch size {config.batch_size} exceeds dataset size {len(dataset)}"
        )
    trained = net.copy()
    trained.ensure_valid()
    rng = np.random.default_rng(config.seed)
    history: list[EpochStats] = []
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            grads, loss_value = _gradients_and_loss(
                trained, dataset.features[idx], dataset.labels[idx], config.loss
            )
            if not math.isfinite(loss_value):
                raise DivergenceError(epoch, b, loss_value)
            _apply_gradients(trained, grads, config.learning_rate)
            total += loss_value * idx.size
        stats = EpochStats(
            epoch=epoch,
            loss=total / n,
            train_accuracy=accuracy(trained, dataset),
            test_accuracy=accuracy(trained, eval_dataset) if eval_dataset else None,
        )
        history.append(stats)
    return trained, history


def augment_retrain(arch: Network, dataset: LabeledDataset,
                    adversarial: LabeledDataset, config: TrainConfig,
                    eval_dataset: LabeledDataset | None = None):
    """Retrain from scratch on the union of the original dataset and an
    adversarial set labeled with its source (original) classes."""
    if adversarial.class_count != dataset.class_count:
        raise DataError("adversarial set and dataset disagree on class count")
    if len(adversarial):
        union = LabeledDataset(
            np.vstack([dataset.features, adversarial.features]),
            np.concatenate([dataset.labels, adversarial.labels]),
            dataset.class_count,
        )
    else:
        union = dataset
    fresh = init_params(arch, config.seed)
    return sgd_train(fresh, union, config, eval_dataset)
