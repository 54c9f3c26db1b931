"""Dense float64 tensors with a reverse-mode autodiff tape.

Every differentiable operation returns a new :class:`Tensor` that remembers
its inputs and a backward closure. Calling :func:`backward` on a scalar
result walks the recorded nodes in reverse creation order and accumulates
gradients into every tensor that requires them.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "NonFiniteError",
    "TapeError",
    "tensor_new",
    "tensor_rand_init",
    "backward",
    "grad_check",
    "GradCheckReport",
    "add",
    "mul",
    "scale",
    "sum_all",
    "slice_channels",
]

_counter = itertools.count()


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class TapeError(RuntimeError):
    pass


class Tensor:
    """A float64 array plus optional autodiff bookkeeping.

    The model uses rank-4 ``(N, C, H, W)`` tensors throughout; biases and a
    few helpers use other ranks, which the tape handles identically.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_seq", "_consumed")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._seq = next(_counter)
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by operation {op!r}")


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    """Wrap an op result, recording it on the tape when any input needs a gradient."""
    _check_finite(data, op)
    out = Tensor(data, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def tensor_new(shape, fill: float = 0.0) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative extent in shape {shape}")
    total = 1
    for s in shape:
        total *= s
    if total > np.iinfo(np.intp).max // 8:
        raise MemoryError(f"tensor of shape {shape} is too large")
    return Tensor(np.full(shape, fill, dtype=np.float64))


def tensor_rand_init(shape, fan_in: int, seed, requires_grad: bool = True) -> Tensor:
    """Uniform on [-sqrt(6/fan_in), sqrt(6/fan_in)] from a seeded PCG64 stream."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    bound = np.sqrt(6.0 / fan_in)
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=requires_grad)


def _topo_order(root: Tensor) -> list[Tensor]:
    seen = {id(root)}
    stack = [root]
    nodes = []
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node._parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    # creation order is a valid topological order of the DAG
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def backward(root: Tensor):
    """Populate ``.grad`` of every leaf reachable from the scalar ``root``.

    Gradients accumulate, so callers zero parameter gradients between steps.
    The tape is freed afterwards; a second call on the same root raises.
    """
    if root.data.size != 1:
        raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
    if root._consumed:
        raise TapeError("tape already consumed; re-run the forward pass")
    if not root.requires_grad:
        raise TapeError("root does not depend on any tensor requiring grad")

    nodes = _topo_order(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in nodes:
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None and node.requires_grad:
                node._accumulate(g)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    for node in nodes:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True
    root._consumed = True


# -- elementwise and reduction primitives ---------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def sum_all(a: Tensor) -> Tensor:
    """Sum every element into a (1, 1, 1, 1) scalar."""
    shape = a.shape
    out = np.array(a.data.sum()).reshape(1, 1, 1, 1)
    return make_node(out, (a,), lambda g: (np.full(shape, g.item()),), "sum_all")


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape
    if not 0 <= start < stop <= shape[1]:
        raise ValueError(f"channel slice [{start}:{stop}] out of range for {shape}")

    def _bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return make_node(a.data[:, start:stop].copy(), (a,), _bw, "slice_channels")


# -- parameters -------------------------------------------------------------


class ParamStore:
    """Insertion-ordered mapping of unique names to learnable tensors."""

    def __init__(self, config=None):
        self.config = config
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_elements(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def copy(self) -> ParamStore:
        out = ParamStore(self.config)
        for name, t in self._params.items():
            out.add(name, Tensor(t.data.copy()))
        return out


# -- finite-difference verification -----------------------------------------


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    tol: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def format(self) -> str:
        width = max((len(n) for n in self.errors), default=4)
        lines = [f"{n:<{width}}  n={self.checked[n]:<4d} max_rel_err={e:.3e}" for n, e in self.errors.items()]
        lines.append(f"worst={self.worst:.3e} tol={self.tol:.1e} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def grad_check(loss_fn: Callable[[ParamStore], Tensor], params: ParamStore, h: float = 1e-5,
               tol: float = 1e-4, max_per_param: int | None = 64, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of ``loss_fn(params)`` with central differences.

    Parameters with more than ``max_per_param`` elements are checked on a
    seeded random subsample of that many elements; ``None`` checks all.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if tol < 0:
        raise ValueError("tol must be non-negative")

    def evaluate() -> float:
        val = float(loss_fn(params).data.item())
        if not np.isfinite(val):
            raise NonFiniteError("loss is not finite during gradient check")
        return val

    params.zero_grad()
    root = loss_fn(params)
    if not np.isfinite(root.data).all():
        raise NonFiniteError("loss is not finite during gradient check")
    backward(root)
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for n, t in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        if max_per_param is None or flat.size <= max_per_param:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = analytic[name].reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
        report.errors[name] = worst
        report.checked[name] = len(idx)
    params.zero_grad()
    return report
