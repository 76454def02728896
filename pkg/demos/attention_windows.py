"""
Neighborhood attention on a small image
=======================================

Each pixel attends to the k x k pixels around it.  Near the border the
window slides inward instead of being padded, so every query still sees
exactly k*k keys.  When k equals the image size every window covers the
whole image and the operator is ordinary global self-attention.
"""

import numpy as np

from tcsr.na import NAParams, attention_weights, na_forward, neighborhood_indices
from tcsr.verify import global_sa_oracle

# windows of a 3x3 neighborhood on a 5x5 image
for i, j in [(2, 2), (0, 0), (4, 1)]:
    rows, cols = neighborhood_indices(i, j, 3, 5, 5).T
    print(f"query ({i},{j}): rows {rows.min()}..{rows.max()}, cols {cols.min()}..{cols.max()}")

# random parameters: c=8 channels, 2 heads, kernel 5
rng = np.random.default_rng(0)
c, heads, k = 8, 2, 5
p = NAParams(*(0.5 * rng.standard_normal((c, c)) for _ in range(4)),
             np.zeros(c), 0.1 * rng.standard_normal((heads, 2 * k - 1, 2 * k - 1)), heads, k)

# the attention weights of each query are a distribution over its 25 keys
x = rng.standard_normal((1, 9, 9, c))
a = attention_weights(x, p)
print("weights per query:", a.shape[-1], " sums in", a.sum(-1).min(), a.sum(-1).max())
print("centre pixel, head 0:\n", np.round(a[0, 4, 4, 0].reshape(k, k), 3))

# saturation: k == H == W reproduces dense attention with the same bias lookups
x = rng.standard_normal((1, k, k, c))
diff = np.abs(na_forward(x, p) - global_sa_oracle(x, *p.arrays(), heads=heads)).max()
print(f"k = H = W = {k}: max |NA - global attention| = {diff:.1e}")
