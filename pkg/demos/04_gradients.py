"""The autodiff tape and central-difference verification.

Forward ops record a backward rule onto any active tape; tape.gradient walks
the records in reverse and accumulates. grad_check compares every analytic
gradient entry against (f(x+eps) - f(x-eps)) / 2eps in 64-bit.
"""

import numpy as np

from maxvit import GRAD_TOL, GradTape, Tensor, grad_check
from maxvit import ops

# a small composite function: mean(gelu(x @ w) + b)
rng = np.random.default_rng(2)
x = Tensor(rng.standard_normal((4, 3)))
w = Tensor(rng.standard_normal((3, 5)))
b = Tensor(rng.standard_normal((5,)))

with GradTape() as tape:
    y = ops.reduce_mean(ops.add(ops.gelu(ops.matmul(x, w)), b))
grad_x, grad_w, grad_b = tape.gradient(y, [x, w, b])
print(f"f(x, w, b) = {y.item():.6f}")
print(f"grad shapes: x {grad_x.shape}, w {grad_w.shape}, b {grad_b.shape}\n")


def f(x_, w_, b_):
    return ops.reduce_mean(ops.add(ops.gelu(ops.matmul(x_, w_)), b_))


err = grad_check(f, [x, w, b])
print(f"grad_check max relative error: {err:.3e} (tolerance {GRAD_TOL})")

# the same machinery drives several thousand checks per primitive in the test
# suite; `maxvit check --filter gradcheck` runs the full battery plus a
# one-block miniature model end to end
conv_w = Tensor(rng.standard_normal((3, 3, 2, 4)))
img = Tensor(rng.standard_normal((1, 5, 5, 2)))
err = grad_check(lambda i, w_: ops.reduce_mean(ops.conv2d(i, w_, stride=2)), [img, conv_w])
print(f"strided conv2d gradient error:  {err:.3e}")
