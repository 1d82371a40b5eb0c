"""Forward-only network layers on (batch, channels, depth, height, width).

Tensors are plain float64 ndarrays in that fixed axis order. "Convolution"
is cross-correlation (no kernel flip). Convolutions accumulate one kernel
offset at a time, so memory stays proportional to the output rather than
to an unrolled window view.

Weight layouts follow the usual deep-learning conventions:
conv3d (out_channels, in_channels, kd, kh, kw) and transposed_conv3d
(in_channels, out_channels, kd, kh, kw). With a shared weight array the
two are exact adjoints: <conv3d(x), y> == <x, transposed_conv3d(y)> for
zero bias and matching stride/padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

LAYER_KINDS = (
    "conv3d",
    "transposed_conv3d",
    "downsample",
    "upsample",
    "activation",
    "normalization",
    "add_skip",
    "concat_skip",
    "attention_gate",
)

ACTIVATIONS = ("relu", "prelu", "sigmoid")

PRELU_INITIAL_SLOPE = 0.25


def require_tensor5(x: np.ndarray, channels: int | None = None, what: str = "input") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 5:
        raise ValueError(f"{what} must be 5-D (batch, channels, depth, height, width), got {x.shape}")
    if any(s < 1 for s in x.shape):
        raise ValueError(f"{what} has a non-positive dimension: {x.shape}")
    if channels is not None and x.shape[1] != channels:
        raise ValueError(f"{what} has {x.shape[1]} channels, layer expects {channels}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite values")
    return x


def _triple(value) -> tuple[int, int, int]:
    if isinstance(value, int):
        value = (value, value, value)
    t = tuple(int(v) for v in value)
    if len(t) != 3:
        raise ValueError(f"expected 3 components, got {value!r}")
    return t


@dataclass(frozen=True)
class LayerSpec:
    """One layer's kind, geometry, and parameter arrays."""

    kind: str
    kernel: tuple[int, int, int] = (1, 1, 1)
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    in_channels: int = 0
    out_channels: int = 0
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    activation: str = ""  # for kind == "activation"
    epsilon: float = 1e-5  # for kind == "normalization"
    # attention_gate extras: gate branch and the 1-channel gate head
    gate_weights: np.ndarray | None = None
    gate_bias: np.ndarray | None = None
    psi_weights: np.ndarray | None = None
    psi_bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "kernel", _triple(self.kernel))
        object.__setattr__(self, "stride", _triple(self.stride))
        object.__setattr__(self, "padding", _triple(self.padding))
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise ValueError(f"kernel and stride must be >= 1, got {self.kernel}, {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        for name in ("weights", "bias", "gate_weights", "gate_bias", "psi_weights", "psi_bias"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.ascontiguousarray(value, dtype=np.float64))
        getattr(self, f"_check_{self.kind}")()

    def _check_conv3d(self):
        expected = (self.out_channels, self.in_channels, *self.kernel)
        if self.weights is None or self.weights.shape != expected:
            raise ValueError(f"conv3d weights must have shape {expected}")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ValueError(f"conv3d bias must have shape ({self.out_channels},)")

    def _check_transposed_conv3d(self):
        expected = (self.in_channels, self.out_channels, *self.kernel)
        if self.weights is None or self.weights.shape != expected:
            raise ValueError(f"transposed_conv3d weights must have shape {expected}")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ValueError(f"transposed_conv3d bias must have shape ({self.out_channels},)")

    def _check_downsample(self):
        if self.kernel != self.stride:
            raise ValueError("downsample pools non-overlapping windows: kernel must equal stride")

    def _check_upsample(self):
        if self.kernel != self.stride:
            raise ValueError("upsample repeats voxels: kernel must equal stride")

    def _check_activation(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.activation == "prelu":
            if self.weights is None or self.weights.shape != (1,):
                raise ValueError("prelu stores its slope as a single-element weights array")
        elif self.weights is not None:
            raise ValueError(f"{self.activation} takes no parameters")

    def _check_normalization(self):
        if self.epsilon <= 0:
            raise ValueError(f"normalization epsilon must be positive, got {self.epsilon}")

    def _check_add_skip(self):
        pass

    def _check_concat_skip(self):
        pass

    def _check_attention_gate(self):
        if self.weights is None or self.weights.ndim != 5 or self.weights.shape[2:] != (1, 1, 1):
            raise ValueError("attention_gate weights must be (inter, in, 1, 1, 1)")
        inter = self.weights.shape[0]
        if self.gate_weights is None or self.gate_weights.shape[0] != inter or self.gate_weights.shape[2:] != (1, 1, 1):
            raise ValueError("attention_gate gate_weights must be (inter, gate_in, 1, 1, 1)")
        if self.gate_bias is None or self.gate_bias.shape != (inter,):
            raise ValueError(f"attention_gate gate_bias must have shape ({inter},)")
        if self.psi_weights is None or self.psi_weights.shape != (1, inter, 1, 1, 1):
            raise ValueError(f"attention_gate psi_weights must have shape (1, {inter}, 1, 1, 1)")
        if self.psi_bias is None or self.psi_bias.shape != (1,):
            raise ValueError("attention_gate psi_bias must have shape (1,)")

    @property
    def num_parameters(self) -> int:
        total = 0
        for name in ("weights", "bias", "gate_weights", "gate_bias", "psi_weights", "psi_bias"):
            value = getattr(self, name)
            if value is not None:
                total += value.size
        return total


def _pad_spatial(x: np.ndarray, padding) -> np.ndarray:
    if padding == (0, 0, 0):
        return x
    pd, ph, pw = padding
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))


def conv3d_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Strided cross-correlation; out axis = floor((in + 2p - k)/s) + 1."""
    x = require_tensor5(x, layer.in_channels)
    kd, kh, kw = layer.kernel
    sd, sh, sw = layer.stride
    padded = _pad_spatial(x, layer.padding)
    _, _, pd, ph, pw = padded.shape
    if pd < kd or ph < kh or pw < kw:
        raise ValueError(
            f"kernel {layer.kernel} exceeds padded input {(pd, ph, pw)}"
        )
    od = (pd - kd) // sd + 1
    oh = (ph - kh) // sh + 1
    ow = (pw - kw) // sw + 1
    batch, o_ch, i_ch = x.shape[0], layer.out_channels, layer.in_channels
    n_out = od * oh * ow
    # per-offset weight matrices, contiguous so matmul stays on the BLAS path
    w_flat = np.ascontiguousarray(layer.weights.reshape(o_ch, i_ch, -1).transpose(2, 0, 1))
    out = np.zeros((batch, o_ch, n_out))
    tmp = np.empty((o_ch, n_out))
    # accumulate per kernel offset: a strided slice and a channel matmul
    offset = 0
    for a in range(kd):
        for b in range(kh):
            for c in range(kw):
                window = padded[
                    :, :,
                    a : a + (od - 1) * sd + 1 : sd,
                    b : b + (oh - 1) * sh + 1 : sh,
                    c : c + (ow - 1) * sw + 1 : sw,
                ]
                for i in range(batch):
                    flat = np.ascontiguousarray(window[i]).reshape(i_ch, n_out)
                    np.matmul(w_flat[offset], flat, out=tmp)
                    out[i] += tmp
                offset += 1
    out = out.reshape(batch, o_ch, od, oh, ow)
    if layer.bias is not None:
        out += layer.bias[None, :, None, None, None]
    return out


def transposed_conv3d_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Adjoint of conv3d_forward; out axis = (in - 1)*s - 2p + k."""
    x = require_tensor5(x, layer.in_channels)
    kd, kh, kw = layer.kernel
    sd, sh, sw = layer.stride
    pd, ph, pw = layer.padding
    _, _, d, h, w = x.shape
    batch, o_ch, i_ch = x.shape[0], layer.out_channels, layer.in_channels
    full = np.zeros(
        (batch, o_ch, (d - 1) * sd + kd, (h - 1) * sh + kh, (w - 1) * sw + kw)
    )
    # w_flat[k] is weights[:, :, a, b, c].T, contiguous for the BLAS path
    w_flat = np.ascontiguousarray(layer.weights.reshape(i_ch, o_ch, -1).transpose(2, 1, 0))
    x_flat = np.ascontiguousarray(x).reshape(batch, i_ch, -1)
    tmp = np.empty((o_ch, d * h * w))
    offset = 0
    for a in range(kd):
        for b in range(kh):
            for c in range(kw):
                target = full[
                    :, :,
                    a : a + (d - 1) * sd + 1 : sd,
                    b : b + (h - 1) * sh + 1 : sh,
                    c : c + (w - 1) * sw + 1 : sw,
                ]
                for i in range(batch):
                    np.matmul(w_flat[offset], x_flat[i], out=tmp)
                    target[i] += tmp.reshape(o_ch, d, h, w)
                offset += 1
    out = full[
        :, :,
        pd : full.shape[2] - pd,
        ph : full.shape[3] - ph,
        pw : full.shape[4] - pw,
    ]
    if out.shape[2] < 1 or out.shape[3] < 1 or out.shape[4] < 1:
        raise ValueError(f"padding {layer.padding} consumes the whole output")
    if layer.bias is not None:
        out = out + layer.bias[None, :, None, None, None]
    return np.ascontiguousarray(out)


def downsample_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Max pooling over non-overlapping stride-sized windows."""
    x = require_tensor5(x)
    sd, sh, sw = layer.stride
    b, c, d, h, w = x.shape
    if d % sd or h % sh or w % sw:
        raise ValueError(f"spatial dims {(d, h, w)} not divisible by pool {layer.stride}")
    view = x.reshape(b, c, d // sd, sd, h // sh, sh, w // sw, sw)
    return view.max(axis=(3, 5, 7))


def upsample_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Nearest-neighbor upsampling by the stride factor."""
    x = require_tensor5(x)
    sd, sh, sw = layer.stride
    return x.repeat(sd, axis=2).repeat(sh, axis=3).repeat(sw, axis=4)


def activation_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    x = require_tensor5(x)
    if layer.activation == "relu":
        return np.maximum(x, 0.0)
    if layer.activation == "prelu":
        slope = layer.weights[0]
        return np.where(x > 0.0, x, slope * x)
    return expit(x)


def normalization_forward(x: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Instance normalization: zero mean, unit variance per (batch, channel)."""
    x = require_tensor5(x)
    mean = x.mean(axis=(2, 3, 4), keepdims=True)
    var = x.var(axis=(2, 3, 4), keepdims=True)
    return (x - mean) / np.sqrt(var + layer.epsilon)


def add_skip_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = require_tensor5(a)
    b = require_tensor5(b)
    if a.shape != b.shape:
        raise ValueError(f"additive skip requires equal shapes, got {a.shape} and {b.shape}")
    return a + b


def concat_skip_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = require_tensor5(a)
    b = require_tensor5(b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(
            f"concatenation requires equal batch and spatial shapes, got {a.shape} and {b.shape}"
        )
    return np.concatenate([a, b], axis=1)


def attention_gate_forward(x: np.ndarray, g: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Additive attention gate: x scaled by a per-voxel gate in [0, 1].

    a = relu(Wx·x + Wg·g + b), gate = sigmoid(psi·a + b_psi); the gate has
    one channel and broadcasts over x's channels.
    """
    x = require_tensor5(x, layer.in_channels, "skip features")
    g = require_tensor5(g, layer.gate_weights.shape[1], "gating signal")
    if x.shape[2:] != g.shape[2:] or x.shape[0] != g.shape[0]:
        raise ValueError(f"gate operands must share batch and spatial shape: {x.shape} vs {g.shape}")
    mixed = np.einsum("oi,bidhw->bodhw", layer.weights[:, :, 0, 0, 0], x)
    mixed += np.einsum("oi,bidhw->bodhw", layer.gate_weights[:, :, 0, 0, 0], g)
    mixed += layer.gate_bias[None, :, None, None, None]
    hidden = np.maximum(mixed, 0.0)
    logit = np.einsum("oi,bidhw->bodhw", layer.psi_weights[:, :, 0, 0, 0], hidden)
    gate = expit(logit + layer.psi_bias[None, :, None, None, None])
    return x * gate
