"""Acyclic feedforward networks built from an ordered list of layers.

Values are carried as float64 numpy arrays. A network maps an input of
shape ``input_shape`` through each layer in order; the full activation
trace (input included) is what ``forward`` returns. Layers are plain
dataclasses; the layer math lives in :func:`apply_layer`.
"""

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    DimensionError,
    ModelFormatError,
    ModelVersionError,
    ValidationError,
)

ACTIVATION_KINDS = ("sigmoid", "relu", "tanh")

MODEL_MAGIC = "JFORGE-MODEL v1"


@dataclass
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class Conv2D:
    kernels: np.ndarray  # (count, in_channels, kh, kw)
    bias: np.ndarray  # (count,)
    stride: int = 1


@dataclass
class MaxPool:
    window: int


@dataclass
class AvgPool:
    window: int


@dataclass
class Activation:
    kind: str


@dataclass
class Flatten:
    pass


@dataclass
class Softmax:
    pass


Layer = Dense | Conv2D | MaxPool | AvgPool | Activation | Flatten | Softmax


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation_apply(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    raise ValidationError(f"unknown activation kind {kind!r}")


def activation_derivative(kind: str, z: np.ndarray) -> np.ndarray:
    """Elementwise f'(z). ReLU takes derivative 0 at the kink z == 0."""
    if kind == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    if kind == "relu":
        return (z > 0).astype(float)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    raise ValidationError(f"unknown activation kind {kind!r}")


def softmax_stable(z: np.ndarray) -> np.ndarray:
    # max subtraction changes no exact value, only avoids overflow
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(C, H, W) -> (C*kh*kw, oh*ow) patch matrix, valid padding."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (C, oh, ow, kh, kw)
    c, oh, ow = windows.shape[:3]
    return windows.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow)


def _conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    count, _, kh, kw = kernels.shape
    _, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride)
    out = kernels.reshape(count, -1) @ cols + bias[:, None]
    return out.reshape(count, oh, ow)


def _pool_blocks(x: np.ndarray, window: int) -> np.ndarray:
    """(C, H, W) -> (C, oh, ow, window*window), non-overlapping blocks."""
    c, h, w = x.shape
    oh, ow = h // window, w // window
    blocks = x.reshape(c, oh, window, ow, window)
    return blocks.transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, window * window)


def apply_layer(layer: Layer, x: np.ndarray, batched: bool = False) -> np.ndarray:
    """Evaluate one layer. ``batched`` adds a leading sample axis."""
    if isinstance(layer, Dense):
        return x @ layer.weights.T + layer.bias
    if isinstance(layer, Activation):
        return activation_apply(layer.kind, x)
    if isinstance(layer, Softmax):
        return softmax_stable(x)
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1) if batched else x.reshape(-1)
    if isinstance(layer, Conv2D):
        if batched:
            return np.stack(
                [_conv2d(s, layer.kernels, layer.bias, layer.stride) for s in x]
            )
        return _conv2d(x, layer.kernels, layer.bias, layer.stride)
    if isinstance(layer, MaxPool):
        if batched:
            return np.stack([_pool_blocks(s, layer.window).max(axis=-1) for s in x])
        return _pool_blocks(x, layer.window).max(axis=-1)
    if isinstance(layer, AvgPool):
        if batched:
            return np.stack([_pool_blocks(s, layer.window).mean(axis=-1) for s in x])
        return _pool_blocks(x, layer.window).mean(axis=-1)
    raise ValidationError(f"unknown layer type {type(layer).__name__}")


def _layer_output_shape(layer: Layer, shape: tuple, index: int) -> tuple:
    """Shape produced by ``layer`` on input ``shape``; raises ValidationError."""

    def fail(msg):
        raise ValidationError(f"layer {index} ({type(layer).__name__}): {msg}")

    if isinstance(layer, Dense):
        out, inp = layer.weights.shape
        if layer.bias.shape != (out,):
            fail(f"bias length {layer.bias.shape} does not match {out} rows")
        if len(shape) != 1:
            fail(f"expects a flat input, got shape {shape}")
        if shape[0] != inp:
            fail(f"expects {inp} inputs, got {shape[0]}")
        return (out,)
    if isinstance(layer, Conv2D):
        if layer.kernels.ndim != 4:
            fail("kernels must be (count, channels, kh, kw)")
        count, channels, kh, kw = layer.kernels.shape
        if layer.bias.shape != (count,):
            fail(f"bias length {layer.bias.shape} does not match {count} kernels")
        if layer.stride < 1:
            fail("stride must be >= 1")
        if len(shape) != 3:
            fail(f"expects (channels, h, w) input, got shape {shape}")
        c, h, w = shape
        if channels != c:
            fail(f"kernel channels {channels} do not match input channels {c}")
        if kh > h or kw > w:
            fail(f"kernel {kh}x{kw} larger than input {h}x{w}")
        oh = (h - kh) // layer.stride + 1
        ow = (w - kw) // layer.stride + 1
        return (count, oh, ow)
    if isinstance(layer, (MaxPool, AvgPool)):
        if layer.window < 1:
            fail("window must be >= 1")
        if len(shape) != 3:
            fail(f"expects (channels, h, w) input, got shape {shape}")
        c, h, w = shape
        if h % layer.window or w % layer.window:
            fail(f"window {layer.window} does not tile input {h}x{w}")
        return (c, h // layer.window, w // layer.window)
    if isinstance(layer, Activation):
        if layer.kind not in ACTIVATION_KINDS:
            fail(f"unknown kind {layer.kind!r}")
        return shape
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, Softmax):
        if len(shape) != 1:
            fail(f"expects a flat input, got shape {shape}")
        return shape
    fail("unknown layer type")


class Network:
    """Ordered differentiable layers mapping input_shape to a class vector."""

    def __init__(self, layers, input_shape):
        self.layers: list[Layer] = list(layers)
        self.input_shape: tuple = tuple(int(d) for d in input_shape)
        self._shapes: list[tuple] | None = None

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.ensure_valid()[-1]))

    def validate(self) -> list[str]:
        """All chaining violations, empty when the network is coherent."""
        errors = []
        if not self.layers:
            errors.append("no layers")
        if not self.input_shape or any(d < 1 for d in self.input_shape):
            errors.append(f"invalid input shape {self.input_shape}")
        shape = self.input_shape
        softmax_seen = False
        for i, layer in enumerate(self.layers):
            if softmax_seen:
                errors.append(f"layer {i}: appears after the final Softmax")
                break
            if isinstance(layer, Softmax):
                if i != len(self.layers) - 1:
                    errors.append(f"layer {i}: Softmax must be the final layer")
                softmax_seen = True
            try:
                shape = _layer_output_shape(layer, shape, i)
            except ValidationError as exc:
                errors.append(str(exc))
                break
        return errors

    def ensure_valid(self) -> list[tuple]:
        """Per-layer output shapes; raises ValidationError when invalid."""
        if self._shapes is None:
            errors = self.validate()
            if errors:
                raise ValidationError("; ".join(errors))
            shapes = []
            shape = self.input_shape
            for i, layer in enumerate(self.layers):
                shape = _layer_output_shape(layer, shape, i)
                shapes.append(shape)
            self._shapes = shapes
        return self._shapes

    def forward(self, x) -> list[np.ndarray]:
        """Activation trace: input, then every layer's output, ending in F(X)."""
        self.ensure_valid()
        x = np.asarray(x, dtype=float)
        if x.shape != self.input_shape:
            raise DimensionError(
                f"input shape {x.shape} does not match network input {self.input_shape}"
            )
        if not np.isfinite(x).all():
            raise DataError("input features must be finite")
        trace = [x]
        for layer in self.layers:
            x = apply_layer(layer, x)
            trace.append(x)
        return trace

    def predict_label(self, x) -> int:
        """argmax of F(X); ties resolve to the lowest class index."""
        out = self.forward(x)[-1]
        if out.ndim != 1:
            raise DimensionError(f"output shape {out.shape} is not a class vector")
        return int(np.argmax(out))

    def parameter_arrays(self) -> list[np.ndarray]:
        """All trainable arrays in layer order (weights before bias)."""
        params = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                params += [layer.weights, layer.bias]
            elif isinstance(layer, Conv2D):
                params += [layer.kernels, layer.bias]
        return params

    def copy(self) -> "Network":
        layers = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                layers.append(Dense(layer.weights.copy(), layer.bias.copy()))
            elif isinstance(layer, Conv2D):
                layers.append(
                    Conv2D(layer.kernels.copy(), layer.bias.copy(), layer.stride)
                )
            elif isinstance(layer, MaxPool):
                layers.append(MaxPool(layer.window))
            elif isinstance(layer, AvgPool):
                layers.append(AvgPool(layer.window))
            elif isinstance(layer, Activation):
                layers.append(Activation(layer.kind))
            elif isinstance(layer, Flatten):
                layers.append(Flatten())
            elif isinstance(layer, Softmax):
                layers.append(Softmax())
        return Network(layers, self.input_shape)


def forward(net: Network, x) -> list[np.ndarray]:
    return net.forward(x)


def predict_label(net: Network, x) -> int:
    return net.predict_label(x)


def validate(net: Network) -> list[str]:
    return net.validate()


# --- architecture builders (parameters zeroed; see train.init_params) ---


def mlp_architecture(input_dim: int, hidden: list[int], classes: int,
                     activation: str = "sigmoid") -> Network:
    layers: list[Layer] = []
    prev = input_dim
    for width in hidden:
        layers.append(Dense(np.zeros((width, prev)), np.zeros(width)))
        layers.append(Activation(activation))
        prev = width
    layers.append(Dense(np.zeros((classes, prev)), np.zeros(classes)))
    layers.append(Softmax())
    return Network(layers, (input_dim,))


def cnn_architecture(side: int = 28, classes: int = 10,
                     activation: str = "tanh") -> Network:
    """Small two-stage convolutional classifier for side x side images."""
    first, second, hidden = 20, 50, 500
    layers: list[Layer] = [
        Conv2D(np.zeros((first, 1, 5, 5)), np.zeros(first)),
        MaxPool(2),
        Activation(activation),
        Conv2D(np.zeros((second, first, 5, 5)), np.zeros(second)),
        MaxPool(2),
        Activation(activation),
        Flatten(),
    ]
    spatial = ((side - 4) // 2 - 4) // 2
    flat = second * spatial * spatial
    layers += [
        Dense(np.zeros((hidden, flat)), np.zeros(hidden)),
        Activation(activation),
        Dense(np.zeros((classes, hidden)), np.zeros(classes)),
        Softmax(),
    ]
    return Network(layers, (1, side, side))


def toy_and_architecture() -> Network:
    """2-2-1 sigmoid net used by the AND-function demonstration."""
    layers = [
        Dense(np.zeros((2, 2)), np.zeros(2)),
        Activation("sigmoid"),
        Dense(np.zeros((1, 2)), np.zeros(1)),
        Activation("sigmoid"),
    ]
    return Network(layers, (2,))


# --- versioned plain-text serialization ---


def _format_array(a: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in a.reshape(-1))


def _layer_lines(index: int, layer: Layer) -> list[str]:
    if isinstance(layer, Dense):
        out, inp = layer.weights.shape
        return [
            f"LAYER {index} dense {out} {inp}",
            _format_array(layer.weights),
            _format_array(layer.bias),
        ]
    if isinstance(layer, Conv2D):
        count, channels, kh, kw = layer.kernels.shape
        return [
            f"LAYER {index} conv2d {count} {channels} {kh} {kw} {layer.stride}",
            _format_array(layer.kernels),
            _format_array(layer.bias),
        ]
    if isinstance(layer, MaxPool):
        return [f"LAYER {index} maxpool {layer.window}"]
    if isinstance(layer, AvgPool):
        return [f"LAYER {index} avgpool {layer.window}"]
    if isinstance(layer, Activation):
        return [f"LAYER {index} activation {layer.kind}"]
    if isinstance(layer, Flatten):
        return [f"LAYER {index} flatten"]
    if isinstance(layer, Softmax):
        return [f"LAYER {index} softmax"]
    raise ValidationError(f"unknown layer type {type(layer).__name__}")


def save_model(net: Network, path) -> None:
    """Write a validated network; load_model(save_model(net)) is bit-exact."""
    net.ensure_valid()
    lines = [MODEL_MAGIC, " ".join(str(d) for d in net.input_shape)]
    for i, layer in enumerate(net.layers):
        lines += _layer_lines(i, layer)
    text = "\n".join(lines) + "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _LineReader:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.number = 0

    def next(self, what: str) -> str:
        while self.number < len(self.lines):
            line = self.lines[self.number]
            self.number += 1
            if line.strip():
                return line.strip()
        raise ModelFormatError(f"line {self.number}: file ends before {what}")

    def done(self) -> bool:
        return all(not line.strip() for line in self.lines[self.number:])


def _parse_floats(line: str, expected: int, lineno: int) -> np.ndarray:
    parts = line.split()
    if len(parts) != expected:
        raise ModelFormatError(
            f"line {lineno}: expected {expected} values, found {len(parts)}"
        )
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ModelFormatError(f"line {lineno}: {exc}") from exc


def _parse_ints(parts: list[str], lineno: int) -> list[int]:
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise ModelFormatError(f"line {lineno}: {exc}") from exc


def load_model(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    reader = _LineReader(text)
    magic = reader.next("magic line")
    if magic != MODEL_MAGIC:
        if magic.startswith("JFORGE-MODEL"):
            raise ModelVersionError(
                f"line 1: unsupported model version {magic!r}, expected {MODEL_MAGIC!r}"
            )
        raise ModelFormatError(f"line 1: not a model file (magic {magic!r})")
    shape = tuple(_parse_ints(reader.next("input shape").split(), reader.number))
    layers: list[Layer] = []
    while not reader.done():
        header = reader.next("layer header")
        lineno = reader.number
        parts = header.split()
        if len(parts) < 3 or parts[0] != "LAYER":
            raise ModelFormatError(f"line {lineno}: expected LAYER header, got {header!r}")
        index = _parse_ints([parts[1]], lineno)[0]
        if index != len(layers):
            raise ModelFormatError(
                f"line {lineno}: layer index {index}, expected {len(layers)}"
            )
        variant = parts[2]
        args = parts[3:]
        if variant == "dense":
            out, inp = _parse_ints(args, lineno)
            w = _parse_floats(reader.next("dense weights"), out * inp, reader.number)
            b = _parse_floats(reader.next("dense bias"), out, reader.number)
            layers.append(Dense(w.reshape(out, inp), b))
        elif variant == "conv2d":
            count, channels, kh, kw, stride = _parse_ints(args, lineno)
            k = _parse_floats(
                reader.next("conv kernels"), count * channels * kh * kw, reader.number
            )
            b = _parse_floats(reader.next("conv bias"), count, reader.number)
            layers.append(Conv2D(k.reshape(count, channels, kh, kw), b, stride))
        elif variant == "maxpool":
            layers.append(MaxPool(_parse_ints(args, lineno)[0]))
        elif variant == "avgpool":
            layers.append(AvgPool(_parse_ints(args, lineno)[0]))
        elif variant == "activation":
            if len(args) != 1 or args[0] not in ACTIVATION_KINDS:
                raise ModelFormatError(f"line {lineno}: bad activation {args!r}")
            layers.append(Activation(args[0]))
        elif variant == "flatten":
            layers.append(Flatten())
        elif variant == "softmax":
            layers.append(Softmax())
        else:
            raise ModelFormatError(f"line {lineno}: unknown layer variant {variant!r}")
    net = Network(layers, shape)
    net.ensure_valid()
    return net
