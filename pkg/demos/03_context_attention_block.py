"""The context + geometric encoding block, piece by piece.

Stage one fans the 256-channel input through a 1x1 branch, three dilated 3x3
branches (rates 6/12/18) and an image-level branch, then fuses back to 256.
Stage two is spatial self-attention with a residual; its BN scale starts at
zero, so a freshly built block is exactly its context stage.
"""

import numpy as np

from humanparse import (
    aspp_forward,
    gce_forward,
    init_gce_params,
    init_nonlocal_params,
    nonlocal_attention,
    nonlocal_forward,
    param_count,
)

rng = np.random.default_rng(2)

print("== shape contract ==")
params = init_gce_params(np.random.default_rng(0))
x = rng.standard_normal((1, 256, 32, 32))
y = gce_forward(x, params)
print(f"canonical input {x.shape} -> {y.shape} (preserved)")

print("\n== identity start ==")
same = np.array_equal(y, aspp_forward(x, params.aspp))
print(f"fresh block (zero BN scale) equals its context stage bit-for-bit: {same}")

print("\n== attention is a row-stochastic matrix ==")
nl = init_nonlocal_params(np.random.default_rng(1), gamma="uniform", scale=0.1)
small = rng.standard_normal((1, 256, 4, 4))
attn = nonlocal_attention(small, nl)
print(f"attention shape for 4x4 input: {attn.shape} (16 positions)")
print(f"row sums: min {attn.sum(axis=2).min():.15f}, max {attn.sum(axis=2).max():.15f}")

const = np.full((1, 256, 4, 4), 0.3)
uniform = nonlocal_attention(const, nl)
print(f"constant input gives uniform attention 1/16 = {uniform[0, 0, 0]:.6f} everywhere: "
      f"{np.allclose(uniform, 1 / 16, atol=1e-12)}")

print("\n== residual behaviour with a live attention stage ==")
z = nonlocal_forward(small, nl)
print(f"output - input norm (attention contribution): {np.linalg.norm(z - small):.4f}")

print("\n== parameter budget ==")
block = param_count(params)
stack = (9 * 256 * 512 + 512) + 7 * (9 * 512 * 512 + 512)
print(f"block total:          {block:>10,} scalars")
print(f"eight 512-d 3x3 convs: {stack:>9,} scalars")
print(f"ratio: {block / stack:.3f} (the block is the lighter head by far)")
