"""A small field-to-field convolutional surrogate with hand-derived
reverse-mode gradients.

Pipeline: optional alignment (trainable 2x2 transposed convolution taking an
element-resolution input to node resolution), 1x1 lifting, a stack of
same-padded spatial convolutions with pointwise skip connections and an
activation, 1x1 projection, an affine distribution shift (output * std +
mean), and hard imposition of the essential boundary conditions
(output * mask + shift). Everything is float64 numpy; the forward pass
records a tape so the vector-Jacobian product against any cotangent field is
exact, not approximated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .fields import MaskSpec

__all__ = ["ModelConfig", "ModelParams", "model_init", "model_forward", "model_vjp", "param_count"]

ACTIVATIONS = ("gelu", "relu", "tanh")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int
    hidden_channels: int
    out_channels: int
    n_layers: int
    kernel_extent: int = 3
    use_alignment: bool = True
    activation: str = "gelu"
    seed: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.hidden_channels, self.out_channels) < 1:
            raise ValueError("channel counts must be >= 1")
        if self.n_layers < 0:
            raise ValueError("layer count must be >= 0")
        if self.kernel_extent < 1 or self.kernel_extent % 2 == 0:
            raise ValueError("kernel extent must be odd and >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    def slice_shapes(self) -> dict:
        """Named parameter slices and their shapes, in canonical order."""
        k = self.kernel_extent
        shapes = {}
        if self.use_alignment:
            shapes["align_w"] = (self.in_channels, self.in_channels, 2, 2)
        shapes["lift_w"] = (self.hidden_channels, self.in_channels)
        shapes["lift_b"] = (self.hidden_channels,)
        for i in range(self.n_layers):
            shapes[f"layer{i}_conv"] = (self.hidden_channels, self.hidden_channels, k, k)
            shapes[f"layer{i}_skip"] = (self.hidden_channels, self.hidden_channels)
            shapes[f"layer{i}_bias"] = (self.hidden_channels,)
        shapes["proj_w"] = (self.out_channels, self.hidden_channels)
        shapes["proj_b"] = (self.out_channels,)
        return shapes


def param_count(cfg: ModelConfig) -> int:
    """Total number of trainable parameters; independent of grid resolution."""
    return sum(int(np.prod(s)) for s in cfg.slice_shapes().values())


@dataclass
class ModelParams:
    """Named parameter slices. ``flatten``/``unflatten`` give the 1-D view
    used by finite-difference checks."""

    arrays: dict = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    @staticmethod
    def unflatten(cfg: ModelConfig, vec: np.ndarray) -> "ModelParams":
        arrays = {}
        pos = 0
        for name, shape in cfg.slice_shapes().items():
            n = int(np.prod(shape))
            arrays[name] = vec[pos : pos + n].reshape(shape).copy()
            pos += n
        if pos != vec.size:
            raise ValueError(f"parameter vector has {vec.size} entries, expected {pos}")
        return ModelParams(arrays)


def model_init(cfg: ModelConfig) -> ModelParams:
    """Deterministic initialization: weights ~ N(0, 1/fan_in), zero biases."""
    rng = np.random.default_rng(cfg.seed)
    arrays = {}
    for name, shape in cfg.slice_shapes().items():
        if name.endswith("_b") or name.endswith("_bias"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            arrays[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return ModelParams(arrays)


def _act(x, kind):
    if kind == "gelu":
        return 0.5 * x * (1.0 + erf(x / _SQRT2))
    if kind == "relu":
        return np.maximum(x, 0.0)
    return np.tanh(x)


def _act_grad(x, kind):
    if kind == "gelu":
        return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)
    if kind == "relu":
        return (x > 0.0).astype(float)
    t = np.tanh(x)
    return 1.0 - t * t


def _pointwise(w, x):
    return np.einsum("oi,bihw->bohw", w, x)


def _pointwise_t(w, g):
    return np.einsum("oi,bohw->bihw", w, g)


def _conv_same(x, w):
    """Same-padded spatial correlation, x (B,C,H,W), w (O,C,k,k)."""
    k = w.shape[-1]
    pad = k // 2
    b, _, h, ww = x.shape
    xp = np.zeros((b, x.shape[1], h + 2 * pad, ww + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + ww] = x
    out = np.zeros((b, w.shape[0], h, ww))
    for u in range(k):
        for v in range(k):
            out += np.einsum("oi,bihw->bohw", w[:, :, u, v], xp[:, :, u : u + h, v : v + ww])
    return out


def _conv_same_grads(x, w, gout):
    """Gradients of _conv_same w.r.t. the filter and the input."""
    k = w.shape[-1]
    pad = k // 2
    b, c, h, ww = x.shape
    xp = np.zeros((b, c, h + 2 * pad, ww + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + ww] = x
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for u in range(k):
        for v in range(k):
            xs = xp[:, :, u : u + h, v : v + ww]
            gw[:, :, u, v] = np.einsum("bohw,bihw->oi", gout, xs)
            gxp[:, :, u : u + h, v : v + ww] += np.einsum("oi,bohw->bihw", w[:, :, u, v], gout)
    return gw, gxp[:, :, pad : pad + h, pad : pad + ww]


def _align_forward(x, w):
    """Stride-1 transposed convolution with a 2x2 filter: (B,C,h,w) ->
    (B,O,h+1,w+1)."""
    b, c, h, ww = x.shape
    out = np.zeros((b, w.shape[0], h + 1, ww + 1))
    for dy in (0, 1):
        for dx in (0, 1):
            out[:, :, dy : dy + h, dx : dx + ww] += np.einsum("oi,bihw->bohw", w[:, :, dy, dx], x)
    return out


def _align_grad_w(x, w_shape, gout):
    gw = np.zeros(w_shape)
    h, ww = x.shape[-2:]
    for dy in (0, 1):
        for dx in (0, 1):
            gw[:, :, dy, dx] = np.einsum("bohw,bihw->oi", gout[:, :, dy : dy + h, dx : dx + ww], x)
    return gw


def model_forward(params: ModelParams, cfg: ModelConfig, x: np.ndarray, mask: MaskSpec, shift_stats):
    """Forward pass; returns (prediction, tape).

    ``x`` is (in_channels, h, w) or batched (B, in_channels, h, w); with
    alignment enabled, h/w are the element counts and the output lands on the
    node grid. ``shift_stats`` provides per-DOF ``mean``/``std`` arrays of
    the output shape. Constrained output DOFs equal the mask's shift values
    exactly for any parameters.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ValueError(f"input shape {x.shape} incompatible with {cfg.in_channels} channels")
    tape = {"x": x, "pre": [], "layer_in": [], "squeeze": squeeze}
    if cfg.use_alignment:
        h = _align_forward(x, params.arrays["align_w"])
    else:
        h = x
    if h.shape[-2:] != mask.mask.shape[-2:]:
        raise ValueError(f"feature resolution {h.shape[-2:]} does not match node grid {mask.mask.shape[-2:]}")
    tape["aligned"] = h
    h = _pointwise(params.arrays["lift_w"], h) + params.arrays["lift_b"][:, None, None]
    for i in range(cfg.n_layers):
        tape["layer_in"].append(h)
        pre = (
            _conv_same(h, params.arrays[f"layer{i}_conv"])
            + _pointwise(params.arrays[f"layer{i}_skip"], h)
            + params.arrays[f"layer{i}_bias"][:, None, None]
        )
        tape["pre"].append(pre)
        h = _act(pre, cfg.activation)
    tape["feat"] = h
    y = _pointwise(params.arrays["proj_w"], h) + params.arrays["proj_b"][:, None, None]
    y = y * shift_stats.std + shift_stats.mean
    a = y * mask.mask + mask.shift
    if squeeze:
        a = a[0]
    tape["mask"] = mask
    tape["std"] = shift_stats.std
    return a, tape


def model_vjp(params: ModelParams, cfg: ModelConfig, tape: dict, cotangent: np.ndarray) -> dict:
    """Exact gradient of <output, cotangent> w.r.t. every parameter slice.

    The mask stage zeroes the cotangent on constrained DOFs, the shift stage
    scales it by std; both fall out of the chain rule, no special cases.
    """
    g = cotangent
    if tape["squeeze"]:
        if g.ndim != 3:
            raise ValueError("cotangent must match the unbatched forward output")
        g = g[None]
    g = g * tape["mask"].mask
    g = g * tape["std"]
    grads = {}
    feat = tape["feat"]
    grads["proj_w"] = np.einsum("bohw,bihw->oi", g, feat)
    grads["proj_b"] = g.sum(axis=(0, 2, 3))
    g = _pointwise_t(params.arrays["proj_w"], g)
    for i in reversed(range(cfg.n_layers)):
        g = g * _act_grad(tape["pre"][i], cfg.activation)
        layer_in = tape["layer_in"][i]
        grads[f"layer{i}_bias"] = g.sum(axis=(0, 2, 3))
        gw, gx = _conv_same_grads(layer_in, params.arrays[f"layer{i}_conv"], g)
        grads[f"layer{i}_conv"] = gw
        grads[f"layer{i}_skip"] = np.einsum("bohw,bihw->oi", g, layer_in)
        g = gx + _pointwise_t(params.arrays[f"layer{i}_skip"], g)
    aligned = tape["aligned"]
    grads["lift_w"] = np.einsum("bohw,bihw->oi", g, aligned)
    grads["lift_b"] = g.sum(axis=(0, 2, 3))
    g = _pointwise_t(params.arrays["lift_w"], g)
    if cfg.use_alignment:
        grads["align_w"] = _align_grad_w(tape["x"], params.arrays["align_w"].shape, g)
    return grads
