"""Build a network and look at what one forward pass returns.

    python demos/02_forward.py
"""
import numpy as np

from hfcn.model import HfcnConfig, build, forward, predict
from hfcn.tensor import Tensor

cfg = HfcnConfig(num_classes=4, height=64, width=64)
params = build(cfg, seed=0)
print(f"{len(params.names())} tensors, {params.num_elements()} weights")
for name in params.names()[:4] + ["..."] + params.names()[-2:]:
    print("  ", name, "" if name == "..." else params[name].shape)

x = Tensor(np.random.default_rng(0).random((2, 3, 64, 64)))
out = forward(params, x)
for i, t in enumerate(out.pre_outputs, 1):
    print(f"pre-output {i}: {t.shape}")
print("fused      :", out.fused.shape)
print("final      :", out.final_output.shape)
print("labels     :", predict(out).shape)
