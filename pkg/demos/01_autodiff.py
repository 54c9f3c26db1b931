"""Tape-based autodiff on a tiny graph, then a finite-difference check.

    python demos/01_autodiff.py
"""
import numpy as np

from hfcn.ops import ConvSpec, conv2d, relu
from hfcn.tensor import ParamStore, Tensor, backward, mul, scale, sum_all, tensor_rand_init, grad_check

rng = np.random.default_rng(0)

# f(p) = 0.5 * sum(p * p) has gradient p
p = Tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
backward(scale(sum_all(mul(p, p)), 0.5))
print("p     :", p.data.ravel().round(4))
print("dF/dp :", p.grad.ravel().round(4))

# a conv + relu layer checked against central differences
spec = ConvSpec(2, 3)
params = ParamStore()
params.add("w", tensor_rand_init((3, 2, 3, 3), 18, seed=1))
params.add("b", Tensor(np.full(3, 0.01), requires_grad=True))
x = Tensor(rng.random((1, 2, 6, 6)))

report = grad_check(lambda ps: sum_all(relu(conv2d(x, ps["w"], ps["b"], spec))), params)
print(report.format())
