"""Context + geometric encoding block for the parsing head.

Two stages, 256 channels throughout.  The context stage is a dilated-pyramid
fan-out: a 1x1 branch, three 3x3 branches at dilations 6/12/18, and an
image-level branch (global average pool -> 1x1 conv -> relu -> bilinear
upsample back to the input size); all branches pass through relu, are
concatenated to 1280 channels and fused by a 1x1 conv + relu back to 256.

The geometric stage is spatial self-attention (embedded-Gaussian form): with
m = h*w flattened positions, A = row-softmax(theta(x)^T phi(x)), context
= A . g(x), and the output is the residual x + BN(w_z(context)).  A freshly
built block zero-initializes the BN scale, so it starts as an exact identity
and the whole module reduces to its context stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    BNParams,
    ConvParams,
    as_nchw,
    batchnorm_backward,
    batchnorm_inference,
    bilinear_resize,
    bilinear_resize_backward,
    conv2d_backward,
    conv2d_forward,
    global_avg_pool,
    global_avg_pool_backward,
    init_bn_params,
    init_conv_params,
    relu,
    relu_backward,
)

GCE_CHANNELS = 256
ASPP_DILATIONS = (6, 12, 18)


def _expect_conv(p: ConvParams, name: str, c_out: int, c_in: int, kernel: int, dilation: int = 1):
    if p.weights.shape != (c_out, c_in, kernel, kernel):
        raise ValueError(
            f"{name} weights must be {(c_out, c_in, kernel, kernel)}, got {p.weights.shape}"
        )
    if p.stride != 1:
        raise ValueError(f"{name} must have stride 1, got {p.stride}")
    if p.dilation != dilation:
        raise ValueError(f"{name} must have dilation {dilation}, got {p.dilation}")
    expect_pad = dilation if kernel == 3 else 0
    if p.padding != expect_pad:
        raise ValueError(f"{name} must have padding {expect_pad}, got {p.padding}")


@dataclass
class ASPPParams:
    branch_1x1: ConvParams
    branch_d6: ConvParams
    branch_d12: ConvParams
    branch_d18: ConvParams
    image_conv: ConvParams
    fuse: ConvParams

    def __post_init__(self):
        c = GCE_CHANNELS
        _expect_conv(self.branch_1x1, "branch_1x1", c, c, 1)
        _expect_conv(self.branch_d6, "branch_d6", c, c, 3, dilation=6)
        _expect_conv(self.branch_d12, "branch_d12", c, c, 3, dilation=12)
        _expect_conv(self.branch_d18, "branch_d18", c, c, 3, dilation=18)
        _expect_conv(self.image_conv, "image_conv", c, c, 1)
        _expect_conv(self.fuse, "fuse", c, 5 * c, 1)


@dataclass
class NonLocalParams:
    theta: ConvParams
    phi: ConvParams
    g: ConvParams
    w_z: ConvParams
    bn: BNParams

    def __post_init__(self):
        c = GCE_CHANNELS
        _expect_conv(self.theta, "theta", c, c, 1)
        _expect_conv(self.phi, "phi", c, c, 1)
        _expect_conv(self.g, "g", c, c, 1)
        _expect_conv(self.w_z, "w_z", c, c, 1)
        if self.bn.gamma.shape != (c,):
            raise ValueError(f"bn must have {c} channels, got {self.bn.gamma.shape}")


@dataclass
class GCEParams:
    aspp: ASPPParams
    nonlocal_: NonLocalParams


def init_aspp_params(rng: np.random.Generator, scale: float = 0.01) -> ASPPParams:
    c = GCE_CHANNELS
    return ASPPParams(
        branch_1x1=init_conv_params(rng, c, c, 1, scale=scale),
        branch_d6=init_conv_params(rng, c, c, 3, padding=6, dilation=6, scale=scale),
        branch_d12=init_conv_params(rng, c, c, 3, padding=12, dilation=12, scale=scale),
        branch_d18=init_conv_params(rng, c, c, 3, padding=18, dilation=18, scale=scale),
        image_conv=init_conv_params(rng, c, c, 1, scale=scale),
        fuse=init_conv_params(rng, c, 5 * c, 1, scale=scale),
    )


def init_nonlocal_params(
    rng: np.random.Generator, *, gamma: str = "zero", scale: float = 0.01
) -> NonLocalParams:
    c = GCE_CHANNELS
    return NonLocalParams(
        theta=init_conv_params(rng, c, c, 1, scale=scale),
        phi=init_conv_params(rng, c, c, 1, scale=scale),
        g=init_conv_params(rng, c, c, 1, scale=scale),
        w_z=init_conv_params(rng, c, c, 1, scale=scale),
        bn=init_bn_params(rng, c, gamma=gamma),
    )


def init_gce_params(
    rng: np.random.Generator, *, gamma: str = "zero", scale: float = 0.01
) -> GCEParams:
    return GCEParams(
        aspp=init_aspp_params(rng, scale=scale),
        nonlocal_=init_nonlocal_params(rng, gamma=gamma, scale=scale),
    )


def _check_channels(x: np.ndarray, who: str) -> np.ndarray:
    x = as_nchw(x)
    if x.shape[1] != GCE_CHANNELS:
        raise ValueError(f"{who} expects {GCE_CHANNELS} input channels, got {x.shape[1]}")
    return x


def _aspp_run(x: np.ndarray, p: ASPPParams):
    h, w = x.shape[2], x.shape[3]
    pre = [
        conv2d_forward(x, p.branch_1x1),
        conv2d_forward(x, p.branch_d6),
        conv2d_forward(x, p.branch_d12),
        conv2d_forward(x, p.branch_d18),
    ]
    acts = [relu(b) for b in pre]
    pooled = global_avg_pool(x)
    img_pre = conv2d_forward(pooled, p.image_conv)
    img_act = relu(img_pre)
    img_up = bilinear_resize(img_act, h, w)
    cat = np.concatenate(acts + [img_up], axis=1)
    fuse_pre = conv2d_forward(cat, p.fuse)
    y = relu(fuse_pre)
    return y, (pre, pooled, img_pre, img_act, cat, fuse_pre)


def aspp_forward(x: np.ndarray, p: ASPPParams) -> np.ndarray:
    x = _check_channels(x, "aspp_forward")
    return _aspp_run(x, p)[0]


def aspp_backward(x: np.ndarray, p: ASPPParams, dy: np.ndarray):
    """Returns (dx, grads) with grads keyed like "branch_d6.weights"."""
    x = _check_channels(x, "aspp_backward")
    dy = as_nchw(dy, "dy")
    _, cache = _aspp_run(x, p)
    pre, pooled, img_pre, img_act, cat, fuse_pre = cache
    h, w = x.shape[2], x.shape[3]
    c = GCE_CHANNELS

    grads: dict[str, np.ndarray] = {}
    dfuse_pre = relu_backward(fuse_pre, dy)
    dcat, grads["fuse.weights"], grads["fuse.bias"] = conv2d_backward(cat, p.fuse, dfuse_pre)

    names = ["branch_1x1", "branch_d6", "branch_d12", "branch_d18"]
    convs = [p.branch_1x1, p.branch_d6, p.branch_d12, p.branch_d18]
    dx = np.zeros_like(x)
    for i, (name, conv) in enumerate(zip(names, convs)):
        dbranch = dcat[:, i * c : (i + 1) * c]
        dpre = relu_backward(pre[i], dbranch)
        dxi, grads[f"{name}.weights"], grads[f"{name}.bias"] = conv2d_backward(x, conv, dpre)
        dx += dxi

    dimg_up = dcat[:, 4 * c : 5 * c]
    dimg_act = bilinear_resize_backward(img_act, h, w, dimg_up)
    dimg_pre = relu_backward(img_pre, dimg_act)
    dpooled, grads["image_conv.weights"], grads["image_conv.bias"] = conv2d_backward(
        pooled, p.image_conv, dimg_pre
    )
    dx += global_avg_pool_backward(x, dpooled)
    return dx, grads


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=2, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=2, keepdims=True)


def nonlocal_attention(x: np.ndarray, p: NonLocalParams) -> np.ndarray:
    """Attention matrix [n, m, m]; row i weights the m source positions."""
    x = _check_channels(x, "nonlocal_attention")
    n, c, h, w = x.shape
    m = h * w
    t = conv2d_forward(x, p.theta).reshape(n, c, m)
    f = conv2d_forward(x, p.phi).reshape(n, c, m)
    logits = np.matmul(t.transpose(0, 2, 1), f)
    return _softmax_rows(logits)


def _nonlocal_run(x: np.ndarray, p: NonLocalParams):
    n, c, h, w = x.shape
    m = h * w
    t = conv2d_forward(x, p.theta).reshape(n, c, m)
    f = conv2d_forward(x, p.phi).reshape(n, c, m)
    g = conv2d_forward(x, p.g).reshape(n, c, m)
    logits = np.matmul(t.transpose(0, 2, 1), f)
    attn = _softmax_rows(logits)
    ctx = np.matmul(g, attn.transpose(0, 2, 1)).reshape(n, c, h, w)
    z_pre = conv2d_forward(np.ascontiguousarray(ctx), p.w_z)
    z = batchnorm_inference(z_pre, p.bn)
    return x + z, (t, f, g, attn, ctx, z_pre)


def nonlocal_forward(x: np.ndarray, p: NonLocalParams) -> np.ndarray:
    x = _check_channels(x, "nonlocal_forward")
    if x.shape[2] * x.shape[3] < 1:
        raise ValueError("nonlocal_forward needs at least one spatial position")
    return _nonlocal_run(x, p)[0]


def nonlocal_backward(x: np.ndarray, p: NonLocalParams, dy: np.ndarray):
    x = _check_channels(x, "nonlocal_backward")
    dy = as_nchw(dy, "dy")
    n, c, h, w = x.shape
    m = h * w
    _, (t, f, g, attn, ctx, z_pre) = _nonlocal_run(x, p)

    grads: dict[str, np.ndarray] = {}
    dz_pre, grads["bn.gamma"], grads["bn.beta"] = batchnorm_backward(z_pre, p.bn, dy)
    dctx4, grads["w_z.weights"], grads["w_z.bias"] = conv2d_backward(
        np.ascontiguousarray(ctx), p.w_z, dz_pre
    )
    dctx = dctx4.reshape(n, c, m)

    dattn = np.matmul(dctx.transpose(0, 2, 1), g)  # [n, m, m]
    dg = np.matmul(dctx, attn)  # [n, c, m]
    # softmax backward per row
    dlogits = attn * (dattn - np.sum(dattn * attn, axis=2, keepdims=True))
    dt = np.matmul(f, dlogits.transpose(0, 2, 1))  # [n, c, m]
    df = np.matmul(t, dlogits)  # [n, c, m]

    dx = dy.copy()
    for name, conv, grad in (("theta", p.theta, dt), ("phi", p.phi, df), ("g", p.g, dg)):
        dxi, grads[f"{name}.weights"], grads[f"{name}.bias"] = conv2d_backward(
            x, conv, np.ascontiguousarray(grad.reshape(n, c, h, w))
        )
        dx += dxi
    return dx, grads


def gce_forward(x: np.ndarray, p: GCEParams) -> np.ndarray:
    """Context stage followed by the geometric (attention) stage."""
    return nonlocal_forward(aspp_forward(x, p.aspp), p.nonlocal_)


def gce_backward(x: np.ndarray, p: GCEParams, dy: np.ndarray):
    x = _check_channels(x, "gce_backward")
    mid = aspp_forward(x, p.aspp)
    dmid, nl_grads = nonlocal_backward(mid, p.nonlocal_, dy)
    dx, aspp_grads = aspp_backward(x, p.aspp, dmid)
    grads = {f"aspp.{k}": v for k, v in aspp_grads.items()}
    grads.update({f"nonlocal_.{k}": v for k, v in nl_grads.items()})
    return dx, grads
