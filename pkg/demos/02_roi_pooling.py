"""RoI machinery: aligned pooling, pyramid assignment, finest-level pooling.

The detection head assigns each box to a pyramid level by its size; the
parsing head instead pools every box from the finest level (P2, stride 4) to
keep detail.  This demo shows both, plus the RoI subsampler and the
relative-scale CDF used to motivate that choice.
"""

import math

import numpy as np

from humanparse import (
    Box,
    FeaturePyramid,
    fpn_assign_level,
    pss_pool,
    relative_scale,
    roi_align,
    scale_cdf,
    subsample_parsing_rois,
)

rng = np.random.default_rng(1)

print("== aligned pooling on a toy feature map ==")
feature = np.zeros((1, 1, 6, 6))
feature[0, 0] = np.arange(36).reshape(6, 6)
box = Box(2.0, 2.0, 10.0, 10.0, score=0.9)  # image coords, stride 2 below
pooled = roi_align(feature, box, stride=2, out=2, sampling_ratio=2)
print("feature (6x6, stride-2 level), box (2,2)-(10,10) pooled to 2x2:")
print(pooled[0, 0])

print("\n== size-based level assignment vs finest-level pooling ==")
image = 512
levels = {
    k: rng.standard_normal((1, 8, math.ceil(image / s), math.ceil(image / s)))
    for k, s in ((2, 4), (3, 8), (4, 16), (5, 32))
}
pyramid = FeaturePyramid(levels, image_w=image, image_h=image)
boxes = [Box(10, 10, 10 + s, 10 + s, score=0.5) for s in (40, 112, 224, 460)]
for b in boxes:
    side = b.x2 - b.x1
    print(f"  {side:4.0f}px box -> detection level P{fpn_assign_level(b)}")
pooled = pss_pool(pyramid, boxes, out=14)
print(f"parsing side: all {len(pooled)} boxes pooled from P2, shapes "
      f"{sorted({p.shape for p in pooled})}")

print("\n== capping the parsing batch ==")
many = [Box(0, 0, 10, 10, score=float(s)) for s in rng.uniform(0, 1, 100)]
kept = subsample_parsing_rois(many, cap=32)
print(f"100 proposals capped to {len(kept)}; lowest kept score "
      f"{min(b.score for b in kept):.3f} vs overall median "
      f"{np.median([b.score for b in many]):.3f}")

print("\n== relative-scale CDF ==")
# synthetic population: people tend to fill much of the frame
areas = np.clip(rng.normal(0.35, 0.25, 400), 0.001, 1.0)
sides = np.sqrt(areas)
scales = [
    relative_scale(Box(0, 0, 100 * s, 100 * s), 100, 100) for s in sides
]
for g, frac in scale_cdf(scales, [0.05, 0.1, 0.25, 0.5, 1.0]):
    bar = "#" * int(40 * frac)
    print(f"  scale <= {g:4.2f}: {frac:5.1%} {bar}")
print("(large instances dominate, which is why the parsing head keeps P2)")
