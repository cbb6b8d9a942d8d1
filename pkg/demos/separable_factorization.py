"""
A depthwise + pointwise pair versus a full convolution
======================================================

A depthwise convolution filters each channel on its own; a 1x1 pointwise
convolution then mixes channels. Together they form a restricted
full convolution whose kernel is the outer product of the two.
"""

import numpy as np

from sepconv import kernels as K

rng = np.random.default_rng(0)
x = rng.standard_normal((1, 8, 8, 4)).astype(np.float32)
depthwise = rng.standard_normal((3, 3, 4)).astype(np.float32)
pointwise = rng.standard_normal((1, 1, 4, 6)).astype(np.float32)

# two cheap steps
separable = K.conv2d(K.depthwise_conv2d(x, depthwise), pointwise)

# the equivalent full kernel: w[i, j, c, o] = depthwise[i, j, c] * pointwise[c, o]
full_kernel = depthwise[:, :, :, None] * pointwise[0, 0][None, None]
full = K.conv2d(x, full_kernel)
print("max difference:", float(np.abs(separable - full).max()))

# the saving: per output pixel, k*k*c + c*cout multiplies instead of k*k*c*cout
k, c, cout = 3, 512, 512
print(f"separable / full cost at {c}->{cout}: {(k * k * c + c * cout) / (k * k * c * cout):.3f}")
