"""
Parameters and multiply-accumulates: attention versus convolution
=================================================================

A k x k convolution's weights grow with k^2.  A neighborhood-attention
layer keeps its four C x C projections fixed and only its bias table grows
with the window.  The compute of attention does grow with k^2, but with a
coefficient of 2C instead of C^2.
"""

from tcsr.model import (conv_param_count, count_params, estimate_flops, init_model,
                        reference_config)
from tcsr.na import na_param_count

C, heads = 64, 4
print(f"{'k':>3} {'NA params':>10} {'conv params':>12} {'NA MACs/px':>11} {'conv MACs/px':>13}")
for k in range(3, 15, 2):
    print(f"{k:>3} {na_param_count(C, heads, k):>10,} {conv_param_count(C, C, k):>12,} "
          f"{estimate_flops('na', 1, 1, C, k):>11,} {estimate_flops('conv', 1, 1, C, k):>13,}")

# a 13x13 attention window costs about as much as a 3x3 convolution
ratio = estimate_flops("na", 1, 1, C, 13) / estimate_flops("conv", 1, 1, C, 3)
print(f"\nNA(k=13) / conv(k=3) MACs: {ratio:.3f}")

# the shift inside the feed-forward network is free
with_shift = count_params(init_model(reference_config("B")))
without = count_params(init_model(reference_config("B", use_shift=False)))
print(f"TCSR-B with shift: {with_shift.total_params:,} params, {with_shift.total_flops:,} MACs")
print(f"TCSR-B no shift:   {without.total_params:,} params, {without.total_flops:,} MACs")

# full table for the tiny model at 64x64
print()
print(count_params(init_model(reference_config("tiny", scale=2)), 64, 64).to_text())
