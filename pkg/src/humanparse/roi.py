"""RoI pooling machinery: aligned pooling, pyramid assignment, subsampling.

Boxes live in image pixel coordinates.  ``roi_align`` maps a box onto a
feature map by dividing by the level stride (no quantization) and averages
``sampling_ratio**2`` bilinear samples per output bin, using the library-wide
half-pixel-center convention.  ``pss_pool`` is the proposal-separated variant:
every parsing-side RoI pools from the finest pyramid level (P2) regardless of
its scale, while detection keeps the usual size-based level assignment
(``fpn_assign_level``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import as_nchw

PYRAMID_STRIDES = {2: 4, 3: 8, 4: 16, 5: 32}


@dataclass
class Box:
    """Axis-aligned region (x1, y1, x2, y2) with a confidence score."""

    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass
class AssignConfig:
    """Pyramid level assignment rule: k = floor(k0 + log2(sqrt(wh)/scale))."""

    k0: int = 4
    canonical_scale: float = 224.0
    k_min: int = 2
    k_max: int = 5

    def __post_init__(self):
        if not self.k_min <= self.k0 <= self.k_max:
            raise ValueError(f"need k_min <= k0 <= k_max, got {self.k_min}, {self.k0}, {self.k_max}")
        if self.canonical_scale <= 0:
            raise ValueError(f"canonical_scale must be positive, got {self.canonical_scale}")


@dataclass
class FeaturePyramid:
    """Feature maps keyed by level (2..5), strides 4/8/16/32.

    All levels must share a channel count; if image dimensions are given,
    level sizes must equal ceil(image / stride).
    """

    levels: dict[int, np.ndarray]
    image_w: int | None = None
    image_h: int | None = None
    strides: dict[int, int] = field(default_factory=lambda: dict(PYRAMID_STRIDES))

    def __post_init__(self):
        self.levels = {k: as_nchw(v, f"P{k}") for k, v in self.levels.items()}
        for k in self.levels:
            if k not in self.strides:
                raise ValueError(f"unknown pyramid level {k}; expected keys in {sorted(self.strides)}")
        channels = {v.shape[1] for v in self.levels.values()}
        if len(channels) > 1:
            raise ValueError(f"pyramid levels disagree on channel count: {sorted(channels)}")
        if self.image_w is not None and self.image_h is not None:
            for k, v in self.levels.items():
                s = self.strides[k]
                expect = (math.ceil(self.image_h / s), math.ceil(self.image_w / s))
                if v.shape[2:] != expect:
                    raise ValueError(
                        f"level {k} spatial size {v.shape[2:]} != ceil(image/stride) {expect}"
                    )


def fpn_assign_level(box: Box, cfg: AssignConfig | None = None) -> int:
    """Assign a box to a pyramid level by its scale (clamped to [k_min, k_max])."""
    cfg = cfg or AssignConfig()
    if box.area <= 0:
        raise ValueError(f"cannot assign a zero-area box: {box}")
    k = cfg.k0 + math.log2(math.sqrt(box.area) / cfg.canonical_scale)
    return int(min(max(math.floor(k), cfg.k_min), cfg.k_max))


def _sample_grid(lo: float, hi: float, out: int, ratio: int) -> np.ndarray:
    """Regular sub-bin sample centers along one axis; shape [out, ratio]."""
    bin_size = (hi - lo) / out
    bins = lo + np.arange(out)[:, None] * bin_size
    offsets = (np.arange(ratio)[None, :] + 0.5) / ratio * bin_size
    return bins + offsets


def _clamped_box(box: Box, stride: float, h: int, w: int):
    x1 = min(max(box.x1 / stride, 0.0), float(w))
    x2 = min(max(box.x2 / stride, 0.0), float(w))
    y1 = min(max(box.y1 / stride, 0.0), float(h))
    y2 = min(max(box.y2 / stride, 0.0), float(h))
    return x1, y1, max(x2, x1), max(y2, y1)


def _bilinear_terms(coords: np.ndarray, size: int):
    """Half-pixel interpolation indices/weights with border replication."""
    pos = np.clip(coords - 0.5, 0.0, size - 1.0)
    lo = np.minimum(np.floor(pos).astype(np.int64), size - 1)
    hi = np.minimum(lo + 1, size - 1)
    frac = pos - lo
    return lo, hi, frac


def roi_align(
    feature: np.ndarray,
    box: Box,
    stride: int,
    out: int,
    sampling_ratio: int = 2,
) -> np.ndarray:
    """Pool a box from a [1, c, h, w] feature map onto an out x out grid.

    Boxes overshooting the feature bounds are clamped, never rejected.
    """
    feature = as_nchw(feature, "feature")
    if feature.shape[0] != 1:
        raise ValueError(f"roi_align expects a single-image feature map, got n={feature.shape[0]}")
    if feature.shape[1] == 0:
        raise ValueError("roi_align: feature has zero channels")
    if out < 1:
        raise ValueError(f"output resolution must be >= 1, got {out}")
    if sampling_ratio < 1:
        raise ValueError(f"sampling_ratio must be >= 1, got {sampling_ratio}")
    _, c, h, w = feature.shape
    x1, y1, x2, y2 = _clamped_box(box, stride, h, w)
    ys = _sample_grid(y1, y2, out, sampling_ratio)
    xs = _sample_grid(x1, x2, out, sampling_ratio)
    y0, y1i, fy = _bilinear_terms(ys, h)
    x0, x1i, fx = _bilinear_terms(xs, w)

    # gather the four corners for every (bin_y, sub_y, bin_x, sub_x) sample
    fy = fy[None, :, :, None, None]
    fx = fx[None, None, None, :, :]
    v00 = feature[0][:, y0[:, :, None, None], x0[None, None]]
    v01 = feature[0][:, y0[:, :, None, None], x1i[None, None]]
    v10 = feature[0][:, y1i[:, :, None, None], x0[None, None]]
    v11 = feature[0][:, y1i[:, :, None, None], x1i[None, None]]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    samples = top * (1 - fy) + bot * fy  # [c, out, ratio, out, ratio]
    return np.mean(samples, axis=(2, 4))[None]


def roi_align_backward(
    feature_shape: tuple[int, int, int, int],
    box: Box,
    stride: int,
    out: int,
    sampling_ratio: int,
    dy: np.ndarray,
) -> np.ndarray:
    """Scatter bilinear sample weights back onto the feature grid."""
    n, c, h, w = feature_shape
    if n != 1:
        raise ValueError(f"roi_align expects a single-image feature map, got n={n}")
    if c == 0:
        raise ValueError("roi_align: feature has zero channels")
    dy = as_nchw(dy, "dy")
    if dy.shape != (1, c, out, out):
        raise ValueError(f"dy shape {dy.shape} != pooled shape {(1, c, out, out)}")
    x1, y1, x2, y2 = _clamped_box(box, stride, h, w)
    ys = _sample_grid(y1, y2, out, sampling_ratio)
    xs = _sample_grid(x1, x2, out, sampling_ratio)
    y0, y1i, fy = _bilinear_terms(ys, h)
    x0, x1i, fx = _bilinear_terms(xs, w)

    g = dy[0][:, :, None, :, None] / (sampling_ratio * sampling_ratio)
    g = np.broadcast_to(g, (c, out, sampling_ratio, out, sampling_ratio))
    fy = fy[:, :, None, None]
    fx = fx[None, None, :, :]
    yy0 = np.broadcast_to(y0[:, :, None, None], g.shape[1:])
    yy1 = np.broadcast_to(y1i[:, :, None, None], g.shape[1:])
    xx0 = np.broadcast_to(x0[None, None, :, :], g.shape[1:])
    xx1 = np.broadcast_to(x1i[None, None, :, :], g.shape[1:])
    dfeature = np.zeros(feature_shape)
    for ch in range(c):
        np.add.at(dfeature[0, ch], (yy0, xx0), g[ch] * ((1 - fy) * (1 - fx)))
        np.add.at(dfeature[0, ch], (yy0, xx1), g[ch] * ((1 - fy) * fx))
        np.add.at(dfeature[0, ch], (yy1, xx0), g[ch] * (fy * (1 - fx)))
        np.add.at(dfeature[0, ch], (yy1, xx1), g[ch] * (fy * fx))
    return dfeature


def pss_pool(
    pyramid: FeaturePyramid,
    boxes: list[Box],
    out: int,
    sampling_ratio: int = 2,
) -> list[np.ndarray]:
    """Pool every box from the finest level (P2), whatever its scale."""
    if 2 not in pyramid.levels:
        raise ValueError("pss_pool requires pyramid level 2 (the finest map)")
    level2 = pyramid.levels[2]
    stride = pyramid.strides[2]
    return [roi_align(level2, box, stride, out, sampling_ratio) for box in boxes]


def subsample_parsing_rois(boxes: list[Box], cap: int = 32) -> list[Box]:
    """Keep at most ``cap`` boxes, preferring high scores.

    With more than ``cap`` candidates the result is the top scorers in
    descending score order, ties broken by original index; otherwise the
    input comes back unchanged.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    if len(boxes) <= cap:
        return list(boxes)
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    return [boxes[i] for i in order[:cap]]


def relative_scale(box: Box, image_w: float, image_h: float, mode: str = "area") -> float:
    """Instance scale relative to the image: area ratio (or its square root).

    The box is clamped to the image before measuring, so detector overshoot
    never produces scales above 1.
    """
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dimensions must be positive, got ({image_w}, {image_h})")
    w = min(max(box.x2, 0.0), image_w) - min(max(box.x1, 0.0), image_w)
    h = min(max(box.y2, 0.0), image_h) - min(max(box.y1, 0.0), image_h)
    ratio = (w * h) / (image_w * image_h)
    if mode == "area":
        return ratio
    if mode == "sqrt":
        return math.sqrt(ratio)
    raise ValueError(f"unknown relative-scale mode {mode!r}")


def scale_cdf(scales: list[float], grid: list[float]) -> list[tuple[float, float]]:
    """Fraction of instances with relative scale <= each grid value."""
    grid = list(grid)
    for a, b in zip(grid, grid[1:]):
        if b <= a:
            raise ValueError(f"grid must be strictly increasing, got {a} then {b}")
    n = len(scales)
    if n == 0:
        return [(g, 0.0) for g in grid]
    arr = np.sort(np.asarray(scales, dtype=np.float64))
    return [(g, float(np.searchsorted(arr, g, side="right")) / n) for g in grid]
