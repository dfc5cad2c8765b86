"""A spectral convolution layer and its switch-off mask."""

import numpy as np

from dctconv import SpectralConv2D, SpectralPointwise, make_mask
from dctconv.dct_conv import switched_off_count

rng = np.random.default_rng(0)
layer = SpectralConv2D("conv", in_channels=4, filters=8, kernel=3, p=0.7, mask_seed=11, rng=rng)

coef = layer.weight.value
print("coefficient tensor:", coef.shape, "->", coef.size, "coefficients")
print("switched off:", int((layer.mask.bits == 0).sum()), "= floor(0.7 *", coef.size, ") =",
      switched_off_count(0.7, coef.size))
print("trainable parameters (coefficients on + biases):", layer.trainable_count())

filters = layer.materialize_filters()
print("materialized filters:", filters.shape, "| nonzero spatial weights:", int(np.count_nonzero(filters)))

# the forward pass is an ordinary convolution with the materialized filters
x = rng.standard_normal((2, 4, 8, 8))
y = layer.forward(x)
print("output:", y.shape)

# masks grow monotonically with p for a fixed seed
m3, m7 = make_mask((8, 4, 3, 3), 0.3, 11), make_mask((8, 4, 3, 3), 0.7, 11)
print("off at p=0.3 is a subset of off at p=0.7:", bool(np.all(m7.bits[m3.bits == 0] == 0)))

# 1x1 layers are rebuilt per 16-channel subrow with a 1-D inverse DCT
pw = SpectralPointwise("pw", in_channels=64, filters=32, p=0.5, mask_seed=3, rng=rng)
print("\npointwise weight matrix:", pw.materialize_filters().shape[:2],
      "| subrows per filter:", 64 // 16)
