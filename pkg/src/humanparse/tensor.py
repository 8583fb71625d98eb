"""Dense NCHW float64 kernels with analytic backward passes.

Feature maps are plain ``numpy.ndarray`` in [batch, channels, height, width]
layout, C-contiguous, float64.  Every operation is a pure function: forward
ops map (input, params) to a new array, backward ops map an upstream gradient
to gradients for each differentiable argument.

Determinism: per-element reductions run in a fixed canonical order (see
``_kernels``), so outputs are bit-identical across runs and thread counts.
Bilinear sampling uses half-pixel centers (align-corners false) everywhere in
the library; pixel (i, j) sits at continuous coordinate (i + 0.5, j + 0.5).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import _kernels

IGNORE_LABEL = 255


def as_nchw(x, name: str = "x") -> np.ndarray:
    """Coerce to a 4-D float64 C-contiguous array, rejecting bad shapes."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"{name} must be 4-D [n, c, h, w], got ndim={arr.ndim}")
    return arr


def _check_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")


@dataclass
class ConvParams:
    """Cross-correlation parameters.

    weights is [c_out, c_in, k_h, k_w]; bias is [c_out].  The same container
    describes transposed convolutions (see ``deconv2d_forward``), where c_out
    is still the first weight axis.
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ValueError(f"weights must be 4-D, got ndim={self.weights.ndim}")
        if self.weights.shape[2] < 1 or self.weights.shape[3] < 1:
            raise ValueError(f"kernel size must be >= 1, got {self.weights.shape[2:]}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match c_out={self.weights.shape[0]}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be positive, got {self.dilation}")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]


@dataclass
class BNParams:
    """Batch-norm inference parameters (stored statistics), per channel.

    gamma/beta are the learnable scalars; running_mean/running_var are
    fixed statistics and are not counted by ``param_count``.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    _learnable_ = ("gamma", "beta")

    def __post_init__(self):
        self.gamma = np.ascontiguousarray(self.gamma, dtype=np.float64)
        self.beta = np.ascontiguousarray(self.beta, dtype=np.float64)
        self.running_mean = np.ascontiguousarray(self.running_mean, dtype=np.float64)
        self.running_var = np.ascontiguousarray(self.running_var, dtype=np.float64)
        c = self.gamma.shape
        if not (self.beta.shape == c and self.running_mean.shape == c and self.running_var.shape == c):
            raise ValueError("gamma/beta/running_mean/running_var must share one [c] shape")
        if np.any(self.running_var < 0):
            raise ValueError("running_var entries must be >= 0")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    """Output extent of a conv axis; rejects configs with leftover pixels."""
    span = size + 2 * padding - dilation * (kernel - 1) - 1
    if span < 0 or span % stride != 0:
        raise ValueError(
            f"invalid conv geometry: size={size} kernel={kernel} stride={stride} "
            f"padding={padding} dilation={dilation}"
        )
    out = span // stride + 1
    if out < 1:
        raise ValueError(f"conv output size must be positive, got {out}")
    return out


def _pad_nchw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Cross-correlation with dilation and zero padding.

    Per-element summation order is bias first, then (c_in, k_y, k_x)
    ascending, matching a naive nested-loop evaluation bit for bit.
    """
    x = as_nchw(x)
    if x.shape[1] != p.c_in:
        raise ValueError(f"input channels {x.shape[1]} != weight c_in {p.c_in}")
    h_out = conv_output_size(x.shape[2], p.weights.shape[2], p.stride, p.padding, p.dilation)
    w_out = conv_output_size(x.shape[3], p.weights.shape[3], p.stride, p.padding, p.dilation)
    out = np.empty((x.shape[0], p.c_out, h_out, w_out))
    xp = _pad_nchw(x, p.padding)
    _kernels.conv2d_fwd(xp, p.weights, p.bias, p.stride, p.dilation, out)
    return out


def conv2d_backward(x: np.ndarray, p: ConvParams, dy: np.ndarray):
    """Gradients of ``conv2d_forward``; returns (dx, dweights, dbias)."""
    x = as_nchw(x)
    dy = as_nchw(dy, "dy")
    if x.shape[1] != p.c_in:
        raise ValueError(f"input channels {x.shape[1]} != weight c_in {p.c_in}")
    h_out = conv_output_size(x.shape[2], p.weights.shape[2], p.stride, p.padding, p.dilation)
    w_out = conv_output_size(x.shape[3], p.weights.shape[3], p.stride, p.padding, p.dilation)
    expect = (x.shape[0], p.c_out, h_out, w_out)
    if dy.shape != expect:
        raise ValueError(f"dy shape {dy.shape} != forward output shape {expect}")
    pad = p.padding
    if p.stride == 1:
        my = (p.weights.shape[2] - 1) * p.dilation
        mx = (p.weights.shape[3] - 1) * p.dilation
        dyp = np.pad(dy, ((0, 0), (0, 0), (my, my), (mx, mx)))
        dx = np.empty_like(x)
        _kernels.conv2d_dx_s1(dyp, p.weights, pad, p.dilation, dx)
    else:
        dxp = np.zeros((x.shape[0], p.c_in, x.shape[2] + 2 * pad, x.shape[3] + 2 * pad))
        _kernels.conv2d_dx(dy, p.weights, p.stride, p.dilation, dxp)
        if pad:
            dx = np.ascontiguousarray(dxp[:, :, pad:-pad, pad:-pad])
        else:
            dx = dxp
    dw = np.empty_like(p.weights)
    _kernels.conv2d_dw(_pad_nchw(x, pad), dy, p.stride, p.dilation, dw)
    db = np.sum(dy, axis=(0, 2, 3))
    return dx, dw, db


def deconv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Transposed convolution; only the 2x2-kernel / stride-2 form is supported.

    Output spatial size is exactly 2x the input.  weights stay in the
    [c_out, c_in, 2, 2] layout of ``ConvParams``.
    """
    x = as_nchw(x)
    if p.weights.shape[2:] != (2, 2) or p.stride != 2 or p.padding != 0 or p.dilation != 1:
        raise ValueError(
            "deconv2d supports kernel 2x2, stride 2, padding 0, dilation 1 only; "
            f"got kernel={p.weights.shape[2:]} stride={p.stride} "
            f"padding={p.padding} dilation={p.dilation}"
        )
    if x.shape[1] != p.c_in:
        raise ValueError(f"input channels {x.shape[1]} != weight c_in {p.c_in}")
    out = np.empty((x.shape[0], p.c_out, 2 * x.shape[2], 2 * x.shape[3]))
    _kernels.deconv2d_fwd(x, p.weights, p.bias, out)
    return out


def deconv2d_backward(x: np.ndarray, p: ConvParams, dy: np.ndarray):
    x = as_nchw(x)
    dy = as_nchw(dy, "dy")
    expect = (x.shape[0], p.c_out, 2 * x.shape[2], 2 * x.shape[3])
    if dy.shape != expect:
        raise ValueError(f"dy shape {dy.shape} != forward output shape {expect}")
    dx = np.zeros_like(x)
    _kernels.deconv2d_dx(dy, p.weights, dx)
    dw = np.empty_like(p.weights)
    _kernels.deconv2d_dw(x, dy, dw)
    db = np.sum(dy, axis=(0, 2, 3))
    return dx, dw, db


def batchnorm_inference(x: np.ndarray, p: BNParams) -> np.ndarray:
    """Per-channel affine normalization with stored statistics."""
    x = as_nchw(x)
    if x.shape[1] != p.gamma.shape[0]:
        raise ValueError(f"input channels {x.shape[1]} != BN channels {p.gamma.shape[0]}")
    scale = (p.gamma / np.sqrt(p.running_var + p.eps))[None, :, None, None]
    shift = (p.beta - p.running_mean * scale[0, :, 0, 0])[None, :, None, None]
    return x * scale + shift


def batchnorm_backward(x: np.ndarray, p: BNParams, dy: np.ndarray):
    """Gradients of ``batchnorm_inference``; returns (dx, dgamma, dbeta)."""
    x = as_nchw(x)
    dy = as_nchw(dy, "dy")
    if x.shape[1] != p.gamma.shape[0]:
        raise ValueError(f"input channels {x.shape[1]} != BN channels {p.gamma.shape[0]}")
    if dy.shape != x.shape:
        raise ValueError(f"dy shape {dy.shape} != input shape {x.shape}")
    inv_std = 1.0 / np.sqrt(p.running_var + p.eps)
    dx = dy * (p.gamma * inv_std)[None, :, None, None]
    xhat = (x - p.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    dgamma = np.sum(dy * xhat, axis=(0, 2, 3))
    dbeta = np.sum(dy, axis=(0, 2, 3))
    return dx, dgamma, dbeta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_nchw(x), 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    x = as_nchw(x)
    dy = as_nchw(dy, "dy")
    return np.where(x > 0, dy, 0.0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Spatial mean per channel; output is [n, c, 1, 1]."""
    x = as_nchw(x)
    if x.shape[2] == 0 or x.shape[3] == 0:
        raise ValueError(f"global_avg_pool: zero-sized spatial input {x.shape[2:]}")
    return np.mean(x, axis=(2, 3), keepdims=True)


def global_avg_pool_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    x = as_nchw(x)
    dy = as_nchw(dy, "dy")
    if dy.shape != (x.shape[0], x.shape[1], 1, 1):
        raise ValueError(f"dy shape {dy.shape} != pooled shape {(x.shape[0], x.shape[1], 1, 1)}")
    return np.broadcast_to(dy / (x.shape[2] * x.shape[3]), x.shape).copy()


def _resize_coords(out_size: int, in_size: int):
    """Half-pixel source sampling positions for one axis.

    Returns (lo index, hi index, hi weight); positions are clamped to the
    valid index range so borders replicate.
    """
    scale = in_size / out_size
    pos = (np.arange(out_size) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, in_size - 1.0)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = pos - lo
    return lo, hi, frac


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize spatial dims with half-pixel-center bilinear sampling."""
    x = as_nchw(x)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got ({out_h}, {out_w})")
    if x.shape[2] == 0 or x.shape[3] == 0:
        raise ValueError(f"bilinear_resize: zero-sized spatial input {x.shape[2:]}")
    y0, y1, fy = _resize_coords(out_h, x.shape[2])
    x0, x1, fx = _resize_coords(out_w, x.shape[3])
    fy = fy[:, None]
    fx = fx[None, :]
    top = x[:, :, y0][:, :, :, x0] * (1 - fx) + x[:, :, y0][:, :, :, x1] * fx
    bot = x[:, :, y1][:, :, :, x0] * (1 - fx) + x[:, :, y1][:, :, :, x1] * fx
    return top * (1 - fy) + bot * fy


def bilinear_resize_backward(x: np.ndarray, out_h: int, out_w: int, dy: np.ndarray) -> np.ndarray:
    x = as_nchw(x)
    dy = as_nchw(dy, "dy")
    if dy.shape != (x.shape[0], x.shape[1], out_h, out_w):
        raise ValueError(
            f"dy shape {dy.shape} != resized shape {(x.shape[0], x.shape[1], out_h, out_w)}"
        )
    y0, y1, fy = _resize_coords(out_h, x.shape[2])
    x0, x1, fx = _resize_coords(out_w, x.shape[3])
    dx = np.zeros_like(x)
    wy0 = (1 - fy)[:, None]
    wy1 = fy[:, None]
    wx0 = (1 - fx)[None, :]
    wx1 = fx[None, :]
    yy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
    yy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
    xx0 = np.broadcast_to(x0[None, :], (out_h, out_w))
    xx1 = np.broadcast_to(x1[None, :], (out_h, out_w))
    for b in range(x.shape[0]):
        for c in range(x.shape[1]):
            g = dy[b, c]
            np.add.at(dx[b, c], (yy0, xx0), g * (wy0 * wx0))
            np.add.at(dx[b, c], (yy0, xx1), g * (wy0 * wx1))
            np.add.at(dx[b, c], (yy1, xx0), g * (wy1 * wx0))
            np.add.at(dx[b, c], (yy1, xx1), g * (wy1 * wx1))
    return dx


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean per-pixel negative log-likelihood with ignore label 255.

    logits is [n, C, h, w]; labels is an integer grid [n, h, w] with values
    in [0, C) or 255.  Returns (loss, dlogits); ignored pixels contribute
    nothing to either.  With every pixel ignored the loss is defined as 0.
    """
    logits = as_nchw(logits, "logits")
    labels = np.asarray(labels)
    n, num_classes, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise ValueError(f"labels shape {labels.shape} != {(n, h, w)}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    bad = (labels != IGNORE_LABEL) & ((labels < 0) | (labels >= num_classes))
    if np.any(bad):
        raise ValueError(
            f"labels must lie in [0, {num_classes}) or equal {IGNORE_LABEL}; "
            f"found {int(labels[bad].flat[0])}"
        )
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / np.sum(exp, axis=1, keepdims=True)
    log_probs = shifted - np.log(np.sum(exp, axis=1, keepdims=True))

    valid = labels != IGNORE_LABEL
    count = int(np.count_nonzero(valid))
    safe_labels = np.where(valid, labels, 0)
    picked = np.take_along_axis(log_probs, safe_labels[:, None], axis=1)[:, 0]
    if count == 0:
        return 0.0, np.zeros_like(logits)
    loss = -float(np.sum(picked[valid])) / count
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, safe_labels[:, None], 1.0, axis=1)
    dlogits = (probs - onehot) * valid[:, None] / count
    return loss, dlogits


# ---------------------------------------------------------------------------
# parameter containers: counting and seeded initialization


def param_arrays(obj, prefix: str = ""):
    """Yield (path, array) for every learnable array in a params dataclass.

    Containers may restrict which fields are learnable via a ``_learnable_``
    class attribute (BN statistics, for instance, are buffers, not weights).
    Nested dataclasses are traversed depth-first in field order.
    """
    learnable = getattr(obj, "_learnable_", None)
    for field in dataclasses.fields(obj):
        value = getattr(obj, field.name)
        path = f"{prefix}{field.name}"
        if isinstance(value, np.ndarray):
            if learnable is None or field.name in learnable:
                yield path, value
        elif dataclasses.is_dataclass(value):
            yield from param_arrays(value, prefix=f"{path}.")


def param_count(obj) -> int:
    """Exact number of learnable scalars in a params object."""
    return sum(arr.size for _, arr in param_arrays(obj))


def replace_params(obj, arrays, prefix: str = ""):
    """Rebuild a params dataclass, swapping in arrays by dotted path.

    Paths follow ``param_arrays``; anything not named in ``arrays`` (buffers,
    scalars) is carried over unchanged.
    """
    kwargs = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        path = f"{prefix}{f.name}"
        if isinstance(value, np.ndarray) and path in arrays:
            kwargs[f.name] = arrays[path]
        elif dataclasses.is_dataclass(value):
            kwargs[f.name] = replace_params(value, arrays, prefix=f"{path}.")
        else:
            kwargs[f.name] = value
    return type(obj)(**kwargs)


def init_conv_params(
    rng: np.random.Generator,
    c_out: int,
    c_in: int,
    kernel: int,
    *,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    scale: float = 0.01,
) -> ConvParams:
    """Seeded uniform[-scale, scale] initializer for benches and grad checks."""
    w = rng.uniform(-scale, scale, size=(c_out, c_in, kernel, kernel))
    b = rng.uniform(-scale, scale, size=c_out)
    return ConvParams(w, b, stride=stride, padding=padding, dilation=dilation)


def init_bn_params(
    rng: np.random.Generator,
    channels: int,
    *,
    gamma: str = "zero",
    eps: float = 1e-5,
) -> BNParams:
    """BN inference params; gamma="zero" gives the identity-residual start."""
    if gamma == "zero":
        g = np.zeros(channels)
        b = np.zeros(channels)
    elif gamma == "uniform":
        g = rng.uniform(-1.0, 1.0, size=channels)
        b = rng.uniform(-0.1, 0.1, size=channels)
    else:
        raise ValueError(f"unknown gamma mode {gamma!r}")
    mean = rng.uniform(-0.1, 0.1, size=channels)
    var = rng.uniform(0.5, 1.5, size=channels)
    return BNParams(g, b, mean, var, eps=eps)
