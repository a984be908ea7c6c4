"""
Merging adapters into the base weights
======================================

Every method in the family is linear in its input once trained, so the
learned update folds into a single (W_ft, beta_ft) pair: inference then
costs exactly one plain linear layer, with the adapter gone. This script
trains two adapters on a synthetic task, merges them, and verifies the
merged layer reproduces the adapted one to float precision.
"""
import numpy as np

from vlra import Rng, TaskSpec, TrainConfig, fit, forward_batch, kind_from_name, merge

task = TaskSpec("teacher_rank1_sum", k=16, d=16, n_train=128, n_val=32, seed=0)

for name in ("ilora", "lora", "mora1", "difffit"):
    layer, result = fit(TrainConfig(task, kind_from_name(name), steps=2000, seed=0))
    state = layer.adapter
    W0, beta0 = layer.base.W0, layer.base.beta0

    W_ft, beta_ft = merge(state, W0, beta0)
    X = Rng(7, 2).normal_matrix(500, task.k)
    adapted = forward_batch(state, W0, beta0, X)
    merged = X @ W_ft.T + beta_ft
    gap = np.abs(adapted - merged).max()

    print(f"{name:>8s}: train loss {result.final_train_loss:.2e}, "
          f"max |adapted - merged| over 500 inputs = {gap:.2e}")

###############################################################################
# The merged matrix carries the learned structure
# -----------------------------------------------
# For the summation adapter the update is rank one with all-equal columns:
# W_ft - W0 = outer(b, ones). Inspect a trained update directly.

layer, _ = fit(TrainConfig(task, kind_from_name("ilora"), steps=2000, seed=0))
W_ft, _ = merge(layer.adapter, layer.base.W0, layer.base.beta0)
update = W_ft - layer.base.W0
print("\ncolumn spread of the merged update (zero means identical columns):",
      f"{np.ptp(update, axis=1).max():.2e}")
print("first column vs learned b:",
      np.allclose(update[:, 0], layer.adapter.trainables["b"]))
