"""Exact input-output Jacobians by layer-wise forward accumulation.

The M-column seed starts as the identity over input features and each
layer multiplies its own local Jacobian on the left, so after the last
layer row (j, i) holds dF_j/dx_i. Tapping at ``logits`` skips a final
Softmax layer, which is where saliency maps want their derivatives.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError
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
    softmax_stable,
)

TAPS = ("probabilities", "logits")


@dataclass
class Jacobian:
    values: np.ndarray  # (rows, cols) = (outputs at tap, input features)
    tap: str = "probabilities"

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def _pool_winner_rows(x: np.ndarray, window: int) -> np.ndarray:
    """Flat input index of each max-pool winner; ties go to the lowest index."""
    c, h, w = x.shape
    oh, ow = h // window, w // window
    blocks = x.reshape(c, oh, window, ow, window).transpose(0, 1, 3, 2, 4)
    flat_block = blocks.reshape(c, oh, ow, window * window)
    win = flat_block.argmax(axis=-1)  # first occurrence == lowest offset
    dh, dw = win // window, win % window
    ci, hi, wi = np.meshgrid(
        np.arange(c), np.arange(oh), np.arange(ow), indexing="ij"
    )
    rows = (ci * h + hi * window + dh) * w + (wi * window + dw)
    return rows.reshape(-1)


def layer_pushforward(layer, layer_input: np.ndarray, j_in: np.ndarray) -> np.ndarray:
    """Push an (input_size, M) seed through one layer's local Jacobian.

    ``layer_input`` is the value entering the layer, which fixes the
    local linearization (activation slopes, max-pool winners, softmax
    probabilities).
    """
    x = np.asarray(layer_input, dtype=float)
    j_in = np.asarray(j_in, dtype=float)
    if j_in.ndim != 2 or j_in.shape[0] != x.size:
        raise DimensionError(
            f"seed has {j_in.shape} rows for a layer input of size {x.size}"
        )
    if isinstance(layer, Dense):
        return layer.weights @ j_in
    if isinstance(layer, Activation):
        slope = activation_derivative(layer.kind, x).reshape(-1)
        return slope[:, None] * j_in
    if isinstance(layer, Softmax):
        y = softmax_stable(x)
        return y[:, None] * (j_in - (y @ j_in)[None, :])
    if isinstance(layer, Flatten):
        return j_in
    if isinstance(layer, AvgPool):
        c, h, w = x.shape
        win = layer.window
        oh, ow = h // win, w // win
        m = j_in.shape[1]
        blocks = j_in.reshape(c, oh, win, ow, win, m)
        return blocks.mean(axis=(2, 4)).reshape(c * oh * ow, m)
    if isinstance(layer, MaxPool):
        return j_in[_pool_winner_rows(x, layer.window), :]
    if isinstance(layer, Conv2D):
        count, channels, kh, kw = layer.kernels.shape
        _, h, w = x.shape
        stride = layer.stride
        m = j_in.shape[1]
        grid = j_in.reshape(channels, h, w, m)
        windows = np.lib.stride_tricks.sliding_window_view(grid, (kh, kw), axis=(1, 2))
        windows = windows[:, ::stride, ::stride]  # (c, oh, ow, m, kh, kw)
        oh, ow = windows.shape[1], windows.shape[2]
        cols = windows.transpose(0, 4, 5, 1, 2, 3).reshape(channels * kh * kw, oh * ow, m)
        kmat = layer.kernels.reshape(count, -1)
        out = np.einsum("fk,kpm->fpm", kmat, cols)
        return out.reshape(count * oh * ow, m)
    raise ConfigError(f"unknown layer type {type(layer).__name__}")


def _tapped_layers(net: Network, tap: str) -> list:
    if tap not in TAPS:
        raise ConfigError(f"tap must be one of {TAPS}, got {tap!r}")
    layers = net.layers
    if tap == "logits":
        if not layers or not isinstance(layers[-1], Softmax):
            raise ConfigError("tap='logits' requires a final Softmax layer")
        layers = layers[:-1]
    return layers


def tapped_output(net: Network, x, tap: str = "probabilities") -> np.ndarray:
    """F(X) at the tap point: probabilities, or pre-softmax logits."""
    _tapped_layers(net, tap)  # validates tap against the architecture
    trace = net.forward(x)
    return trace[-2] if tap == "logits" else trace[-1]


def forward_derivative(net: Network, x, tap: str = "probabilities") -> Jacobian:
    """Full Jacobian dF_j/dx_i at x, accumulated input to output."""
    net.ensure_valid()
    layers = _tapped_layers(net, tap)
    x = np.asarray(x, dtype=float)
    if x.shape != net.input_shape:
        raise DimensionError(
            f"input shape {x.shape} does not match network input {net.input_shape}"
        )
    current = x
    j = None  # identity seed, materialized lazily
    for layer in layers:
        if j is None and isinstance(layer, Dense):
            # W @ I == W entry for entry; skip the first big matmul
            j = layer.weights.copy()
        else:
            if j is None:
                j = np.eye(x.size)
            j = layer_pushforward(layer, current, j)
        current = apply_layer(layer, current)
    if j is None:
        j = np.eye(x.size)
    return Jacobian(np.ascontiguousarray(j), tap)


def finite_difference_jacobian(net: Network, x, h: float = 1e-5,
                               tap: str = "probabilities") -> Jacobian:
    """Central-difference oracle: column i is (F(x+h e_i) - F(x-h e_i)) / 2h.

    Probe points are evaluated as-is, without clamping to the input domain.
    """
    if not h > 0:
        raise ConfigError(f"step h must be > 0, got {h}")
    x = np.asarray(x, dtype=float)
    base = np.asarray(tapped_output(net, x, tap), dtype=float)
    cols = np.empty((base.size, x.size))
    flat = x.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        plus = tapped_output(net, bumped.reshape(x.shape), tap)
        bumped[i] = flat[i] - h
        minus = tapped_output(net, bumped.reshape(x.shape), tap)
        cols[:, i] = (plus - minus) / (2.0 * h)
    return Jacobian(cols, tap)


def jacobian_matrix(j) -> np.ndarray:
    """Accept a Jacobian or a bare (N, M) array; always finite."""
    values = np.asarray(j.values if isinstance(j, Jacobian) else j, dtype=float)
    if values.ndim != 2:
        raise DimensionError(f"expected a 2-D Jacobian, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise DataError("Jacobian entries must be finite")
    return values
