"""Tour of the NCHW kernels and the finite-difference gradient checker.

Every op is a pure function over float64 arrays; every backward is analytic
and verified here against central differences.
"""

import numpy as np

from humanparse import (
    BNParams,
    ConvParams,
    batchnorm_backward,
    batchnorm_inference,
    bilinear_resize,
    conv2d_backward,
    conv2d_forward,
    deconv2d_forward,
    numeric_gradcheck,
    softmax_cross_entropy,
)

rng = np.random.default_rng(0)

print("== dilated convolution ==")
x = rng.standard_normal((1, 2, 32, 32))
conv = ConvParams(rng.standard_normal((4, 2, 3, 3)) * 0.1, np.zeros(4),
                  padding=6, dilation=6)
y = conv2d_forward(x, conv)
print(f"3x3 conv, dilation 6, padding 6: {x.shape} -> {y.shape} (size preserved)")

print("\n== transposed convolution (2x upscale) ==")
deconv = ConvParams(rng.standard_normal((2, 2, 2, 2)) * 0.1, np.zeros(2), stride=2)
y = deconv2d_forward(x[:, :, :8, :8], deconv)
print(f"2x2 kernel, stride 2: (1, 2, 8, 8) -> {y.shape}")

print("\n== batch-norm inference ==")
bn = BNParams(gamma=np.ones(2), beta=np.zeros(2),
              running_mean=np.zeros(2), running_var=np.ones(2))
z = batchnorm_inference(x[:, :, :4, :4], bn)
print(f"unit statistics reproduce the input to {np.max(np.abs(z - x[:, :, :4, :4])):.1e}")

print("\n== bilinear resize (half-pixel centers) ==")
tiny = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
print("2x2 input:")
print(tiny[0, 0])
print("resized to 4x4:")
print(bilinear_resize(tiny, 4, 4)[0, 0])

print("\n== per-pixel softmax cross-entropy ==")
logits = np.zeros((1, 5, 4, 4))
labels = np.zeros((1, 4, 4), dtype=np.int64)
labels[0, 0, 0] = 255  # ignored pixel
loss, dlogits = softmax_cross_entropy(logits, labels)
print(f"uniform logits over 5 classes: loss = {loss:.6f} (ln 5 = {np.log(5):.6f})")
print(f"ignored pixel gradient is exactly zero: {not dlogits[0, :, 0, 0].any()}")

print("\n== gradient verification ==")
args = {
    "x": rng.standard_normal((1, 2, 6, 6)),
    "w": rng.standard_normal((3, 2, 3, 3)),
    "b": rng.standard_normal(3),
}
err = numeric_gradcheck(
    lambda a: conv2d_forward(a["x"], ConvParams(a["w"], a["b"], padding=2, dilation=2)),
    lambda a, dy: dict(
        zip(("x", "w", "b"),
            conv2d_backward(a["x"], ConvParams(a["w"], a["b"], padding=2, dilation=2), dy))
    ),
    args,
)
print(f"conv2d: worst relative error vs central differences = {err:.2e}")

err = numeric_gradcheck(
    lambda a: batchnorm_inference(a["x"], BNParams(a["g"], a["be"], bn.running_mean,
                                                   bn.running_var)),
    lambda a, dy: dict(
        zip(("x", "g", "be"),
            batchnorm_backward(a["x"], BNParams(a["g"], a["be"], bn.running_mean,
                                                bn.running_var), dy))
    ),
    {"x": rng.standard_normal((1, 2, 4, 4)), "g": np.ones(2), "be": np.zeros(2)},
)
print(f"batchnorm: worst relative error = {err:.2e}")
