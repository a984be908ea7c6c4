"""
Adapter zoo: every very-low-rank method side by side
====================================================

Builds each fine-tuning adapter over the same frozen linear layer and prints
the accounting that motivates the whole family: trainable parameters and
extra forward FLOPs per layer, at the widths of a typical transformer block.
"""
import numpy as np

from vlra import (METHOD_NAMES, Rng, flop_count, forward, kind_from_name,
                  make_adapter, param_count)

K = D = 768  # hidden widths of a base-size transformer layer

print(f"frozen layer: {D} x {K} weights ({D * K:,} frozen parameters)\n")

###############################################################################
# Parameter and FLOP accounting
# -----------------------------
# The "very low rank" regime configures every method at its minimum:
# rank 1 for the factored methods, rank round(sqrt(d)) for the square-matrix
# ones. The summation adapter and bias-only tuning tie for the smallest
# count; the summation adapter is the cheapest low-rank method in multiplies.

print(f"{'method':>12s} {'params':>10s} {'extra mults':>12s} {'extra adds':>12s}")
for name in METHOD_NAMES:
    kind = kind_from_name(name)
    mults, adds = flop_count(kind, K, D)
    print(f"{name:>12s} {param_count(kind, K, D):>10,} {mults:>12,} {adds:>12,}")

###############################################################################
# Zero-shift initialization
# -------------------------
# Every freshly constructed adapter computes exactly the frozen layer's
# output, so fine-tuning always starts from the pretrained function.

k, d = 8, 5
W0 = Rng(0, 0).normal_matrix(d, k) / np.sqrt(k)
beta0 = 0.1 * Rng(0, 0).normal(d)
x = Rng(1, 2).normal(k)
base = W0 @ x + beta0

print("\nmax |adapted - frozen| at init:")
for name in METHOD_NAMES:
    state = make_adapter(kind_from_name(name), k, d, Rng(0, 1), W0=W0)
    print(f"{name:>12s} {np.abs(forward(state, W0, beta0, x) - base).max():.1e}")

###############################################################################
# What the summation adapter actually does
# ----------------------------------------
# Its whole update is one trainable vector b scaling the input feature sum:
# output_i = base_i + b_i * sum(x). Two lines of math, d parameters.

state = make_adapter(kind_from_name("ilora"), k, d, Rng(0, 1))
state.trainables["b"][:] = Rng(2, 1).normal(d)
shift = forward(state, W0, beta0, x) - base
print("\nsummation-adapter shift    :", np.round(shift, 4))
print("b * sum(x) computed by hand:", np.round(state.trainables["b"] * x.sum(), 4))
