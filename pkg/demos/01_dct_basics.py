"""DCT-II in two normalizations.

The orthonormal transform is an exact inverse pair and preserves energy;
the verbatim transform is the literal double sum without scaling, so
applying it forward then backward does not return the input.
"""

import numpy as np

from dctconv import dct1, dct2, idct1, idct2, idct_grad

rng = np.random.default_rng(0)
x = rng.standard_normal((3, 3))

X = dct2(x)
print("orthonormal coefficients of a random 3x3 slice:\n", X.round(3))
print("roundtrip error:", np.abs(idct2(X) - x).max())
print("energy in / out:", (x ** 2).sum().round(6), (X ** 2).sum().round(6))

# a constant slice lives entirely in the DC coefficient
print("\nDCT of ones(3, 3):\n", dct2(np.ones((3, 3))).round(6))

# verbatim mode: the literal sums are not mutually inverse
# (for length n the roundtrip is n/2 * x + sum(x)/2)
xv = rng.standard_normal(5)
back = idct1(dct1(xv, "verbatim"), "verbatim")
print("\nverbatim roundtrip of a length-5 vector equals 2.5x + 0.5 sum(x):",
      np.allclose(back, 2.5 * xv + 0.5 * xv.sum()))

# gradients flow from filters back to coefficients through the forward DCT
g = rng.standard_normal((3, 3))
print("idct_grad == dct2 for the upstream gradient:", np.allclose(idct_grad(g), dct2(g)))
