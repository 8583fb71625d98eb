"""Parsing-head topologies: the 8-conv baseline and the decoupled variants.

A branch takes pooled RoI features [n, 256, R, R] and emits per-class logits
at 4R x 4R: every variant ends with a 2x transposed convolution, a 1x1
classifier, and a 2x bilinear upscale.  Bodies differ:

  Baseline8Conv    eight 3x3 convs (width ``conv_width``) + relu
  GCEOnly          the context/attention block alone
  Conv4_GCE        four 3x3 convs, then the block
  GCE_Conv4        the block, then four 3x3 convs
  Conv4_GCE_Conv4  four convs on both sides

The block is fixed at 256 channels, so a 1x1 transition conv (+relu) is
inserted wherever it follows wider convs; the transition counts as body.
Parameters are reported separately for body and the shared deconv/classifier
tail.  RoIs never interact: a batched forward equals the concatenation of
per-RoI forwards bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .gce import GCE_CHANNELS, GCEParams, gce_backward, gce_forward, init_gce_params
from .tensor import (
    ConvParams,
    as_nchw,
    bilinear_resize,
    bilinear_resize_backward,
    conv2d_backward,
    conv2d_forward,
    deconv2d_backward,
    deconv2d_forward,
    init_conv_params,
    param_arrays,
    param_count,
    relu,
    relu_backward,
    replace_params,
)

VARIANTS = ("Baseline8Conv", "GCEOnly", "Conv4_GCE", "GCE_Conv4", "Conv4_GCE_Conv4")
ROI_RESOLUTIONS = (14, 32, 64)


@dataclass
class BranchConfig:
    variant: str
    num_classes: int
    roi_resolution: int = 14
    conv_width: int = 512

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.roi_resolution not in ROI_RESOLUTIONS:
            raise ValueError(
                f"roi_resolution must be one of {ROI_RESOLUTIONS}, got {self.roi_resolution}"
            )
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.conv_width < 1:
            raise ValueError(f"conv_width must be positive, got {self.conv_width}")


# layer plan entries: ("conv", c_out, c_in, kernel, relu) / ("gce",)
#                     ("deconv", c_out, c_in) / ("bilinear2x",)


def _body_plan(cfg: BranchConfig):
    plan = []
    c_in = GCE_CHANNELS
    width = cfg.conv_width

    def convs(n):
        nonlocal c_in
        for _ in range(n):
            plan.append(("conv", width, c_in, 3, True))
            c_in = width

    if cfg.variant == "Baseline8Conv":
        convs(8)
    else:
        if cfg.variant in ("Conv4_GCE", "Conv4_GCE_Conv4"):
            convs(4)
        if c_in != GCE_CHANNELS:
            plan.append(("conv", GCE_CHANNELS, c_in, 1, True))
            c_in = GCE_CHANNELS
        plan.append(("gce",))
        if cfg.variant in ("GCE_Conv4", "Conv4_GCE_Conv4"):
            convs(4)
    return plan, c_in


def _tail_plan(cfg: BranchConfig, c_in: int):
    return [
        ("deconv", c_in, c_in),
        ("conv", cfg.num_classes, c_in, 1, False),
        ("bilinear2x",),
    ]


def _plan_scalar_count(plan) -> int:
    total = 0
    for entry in plan:
        kind = entry[0]
        if kind == "conv":
            _, c_out, c_in, k, _ = entry
            total += c_out * c_in * k * k + c_out
        elif kind == "deconv":
            _, c_out, c_in = entry
            total += c_out * c_in * 4 + c_out
        elif kind == "gce":
            c = GCE_CHANNELS
            aspp = 2 * (c * c + c) + 3 * (9 * c * c + c) + (5 * c * c + c)
            nl = 4 * (c * c + c) + 2 * c
            total += aspp + nl
    return total


@dataclass
class _Layer:
    kind: str
    params: object = None
    apply_relu: bool = False


@dataclass
class Branch:
    """An immutable, fully materialized branch; build via ``build_branch``."""

    cfg: BranchConfig
    layers: list = field(default_factory=list)


def build_branch(cfg: BranchConfig, seed: int, *, bn_gamma: str = "zero") -> Branch:
    """Materialize a branch with seeded uniform[-0.01, 0.01] parameters.

    The same (cfg, seed) always yields bit-identical parameters.  bn_gamma
    controls the attention block's BN scale init ("zero" for the identity
    start, "uniform" when nonzero gradients through the block are wanted).
    """
    rng = np.random.default_rng(seed)
    body, c_in = _body_plan(cfg)
    layers = []
    for entry in body + _tail_plan(cfg, c_in):
        kind = entry[0]
        if kind == "conv":
            _, c_out, c_i, k, use_relu = entry
            pad = 1 if k == 3 else 0
            layers.append(
                _Layer("conv", init_conv_params(rng, c_out, c_i, k, padding=pad), use_relu)
            )
        elif kind == "deconv":
            _, c_out, c_i = entry
            layers.append(_Layer("deconv", init_conv_params(rng, c_out, c_i, 2, stride=2)))
        elif kind == "gce":
            layers.append(_Layer("gce", init_gce_params(rng, gamma=bn_gamma)))
        elif kind == "bilinear2x":
            layers.append(_Layer("bilinear2x"))
    return Branch(cfg=cfg, layers=layers)


def _forward_layers(branch: Branch, x: np.ndarray):
    inputs = []
    pres = []  # conv pre-activations, kept for the relu mask in backward
    for layer in branch.layers:
        inputs.append(x)
        pre = None
        if layer.kind == "conv":
            pre = conv2d_forward(x, layer.params)
            x = relu(pre) if layer.apply_relu else pre
        elif layer.kind == "deconv":
            x = deconv2d_forward(x, layer.params)
        elif layer.kind == "gce":
            x = gce_forward(x, layer.params)
        elif layer.kind == "bilinear2x":
            x = bilinear_resize(x, 2 * x.shape[2], 2 * x.shape[3])
        pres.append(pre)
    return x, inputs, pres


def _check_input(branch: Branch, pooled: np.ndarray) -> np.ndarray:
    pooled = as_nchw(pooled, "pooled")
    r = branch.cfg.roi_resolution
    if pooled.shape[1] != GCE_CHANNELS or pooled.shape[2] != r or pooled.shape[3] != r:
        raise ValueError(
            f"pooled input must be [n, {GCE_CHANNELS}, {r}, {r}], got {pooled.shape}"
        )
    return pooled


def branch_forward(branch: Branch, pooled: np.ndarray) -> np.ndarray:
    """Logits [n, num_classes, 4R, 4R] for pooled RoI features [n, 256, R, R]."""
    pooled = _check_input(branch, pooled)
    return _forward_layers(branch, pooled)[0]


def branch_backward(branch: Branch, pooled: np.ndarray, dy: np.ndarray):
    """Returns (dx, grads) with grads keyed "L{i}.<param path>"."""
    pooled = _check_input(branch, pooled)
    dy = as_nchw(dy, "dy")
    out, inputs, pres = _forward_layers(branch, pooled)
    if dy.shape != out.shape:
        raise ValueError(f"dy shape {dy.shape} != output shape {out.shape}")

    grads: dict[str, np.ndarray] = {}
    for i in range(len(branch.layers) - 1, -1, -1):
        layer = branch.layers[i]
        x = inputs[i]
        if layer.kind == "conv":
            if layer.apply_relu:
                dy = relu_backward(pres[i], dy)
            dy, dw, db = conv2d_backward(x, layer.params, dy)
            grads[f"L{i}.weights"] = dw
            grads[f"L{i}.bias"] = db
        elif layer.kind == "deconv":
            dy, dw, db = deconv2d_backward(x, layer.params, dy)
            grads[f"L{i}.weights"] = dw
            grads[f"L{i}.bias"] = db
        elif layer.kind == "gce":
            dy, sub = gce_backward(x, layer.params, dy)
            for key, val in sub.items():
                grads[f"L{i}.{key}"] = val
        elif layer.kind == "bilinear2x":
            dy = bilinear_resize_backward(x, 2 * x.shape[2], 2 * x.shape[3], dy)
    return dy, grads


def branch_param_count(cfg: BranchConfig) -> int:
    """Learnable scalars in the body (tail excluded; see tail count)."""
    body, _ = _body_plan(cfg)
    return _plan_scalar_count(body)


def branch_tail_param_count(cfg: BranchConfig) -> int:
    """Learnable scalars in the shared deconv + classifier tail."""
    body, c_in = _body_plan(cfg)
    return _plan_scalar_count(_tail_plan(cfg, c_in))


def branch_total_param_count(branch: Branch) -> int:
    total = 0
    for layer in branch.layers:
        if layer.params is not None:
            total += param_count(layer.params)
    return total


def branch_param_arrays(branch: Branch):
    """Yield ("L{i}.<path>", array) for every learnable array in the branch."""
    for i, layer in enumerate(branch.layers):
        if layer.params is not None:
            yield from param_arrays(layer.params, prefix=f"L{i}.")


def replace_branch_arrays(branch: Branch, arrays) -> Branch:
    """Rebuild the branch with arrays swapped in by their "L{i}." paths."""
    layers = []
    for i, layer in enumerate(branch.layers):
        params = layer.params
        if params is not None:
            params = replace_params(params, arrays, prefix=f"L{i}.")
        layers.append(_Layer(layer.kind, params, layer.apply_relu))
    return Branch(cfg=branch.cfg, layers=layers)


def bench_forward(
    cfg: BranchConfig,
    batch: int,
    repeats: int,
    *,
    seed: int = 0,
    warmup: int = 1,
) -> dict:
    """Wall-clock statistics of ``branch_forward`` on synthetic inputs.

    Warm-up runs are excluded from the stats.  Purely informational; timing
    is hardware-dependent and never an acceptance gate.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    branch = build_branch(cfg, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBE7C4]))
    x = rng.standard_normal((batch, GCE_CHANNELS, cfg.roi_resolution, cfg.roi_resolution))
    for _ in range(warmup):
        branch_forward(branch, x)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        branch_forward(branch, x)
        samples.append((time.perf_counter() - t0) * 1e3)
    return {
        "variant": cfg.variant,
        "roi_resolution": cfg.roi_resolution,
        "num_classes": cfg.num_classes,
        "conv_width": cfg.conv_width,
        "batch": batch,
        "repeats": repeats,
        "warmup": warmup,
        "seed": seed,
        "mean_ms": float(np.mean(samples)),
        "p50_ms": float(np.percentile(samples, 50)),
        "p95_ms": float(np.percentile(samples, 95)),
        "samples_ms": [float(s) for s in samples],
    }
