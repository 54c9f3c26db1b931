"""Per-image class weights and the composite objective.

    python demos/03_loss.py
"""
import numpy as np

from hfcn.model import HfcnConfig, build, forward
from hfcn.objective import LAMBDA_GROUPS, composite_loss, soft_weights
from hfcn.tensor import Tensor

# one 10x10 image: 90 background pixels, 6 of class 1, 4 of class 2
labels = np.zeros((1, 10, 10), int)
labels[0, 0, :6] = 1
labels[0, 1, :4] = 2
w = soft_weights(labels, 3)
print("weights by class:", {k: float(w[labels == k][0]) for k in range(3)})
# 100/6 and 100/4 are both above the floor of 2

cfg = HfcnConfig.minimal(num_classes=3)
bundle = forward(build(cfg, 0), Tensor(np.random.default_rng(1).random((1, 3, 32, 32))))
target = np.random.default_rng(2).integers(0, 3, (1, 32, 32))
for group in ("model1", "model7", "model9"):
    b = composite_loss(bundle, target, LAMBDA_GROUPS[group])
    print(f"{group}: lambdas={b.lambdas} composite={b.composite:.5f} final={b.final:.5f}")
