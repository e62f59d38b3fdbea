"""5-axis tensors with reverse-mode differentiation.

Every value in the network lives in a dense (batch, channels, depth, height,
width) array; vectors ride on the channel axis and 2D frames use depth 1.
Ops (see attgan3d.ops) record a closure graph on their outputs; backward()
walks the graph once in reverse topological order and accumulates gradients
into .grad on every tensor that requires them. Calling backward twice
without zero_grads doubles the accumulated gradients - that is the contract,
so multi-loss sums compose.

The default dtype is float32; gradient checks and oracle comparisons switch
the whole graph to float64 via using_dtype()/set_default_dtype().
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np


class Shape5(NamedTuple):
    n: int
    c: int
    d: int
    h: int
    w: int


class DimensionMismatch(ValueError):
    """Operand shapes disagree; the message names the offending axis."""


class InvalidGeometry(ValueError):
    """A convolution/pool geometry yields an empty or impossible output."""


class DegenerateBatch(ValueError):
    """A normalization reduction set has fewer than two elements."""


class GraphContract(RuntimeError):
    """A differentiation contract was violated (e.g. non-scalar root)."""


_default_dtype = np.float32
_grad_enabled = True


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported tensor dtype {dtype}")
    _default_dtype = dtype.type


def default_dtype():
    return _default_dtype


@contextlib.contextmanager
def using_dtype(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block (inference / perturbed evals)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=default_dtype())
        if arr.ndim != 5:
            raise DimensionMismatch(
                f"tensors are 5-axis (n,c,d,h,w); got {arr.ndim} axes"
            )
        if min(arr.shape) < 1:
            raise DimensionMismatch(f"all axes must be >= 1; got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> Shape5:
        return Shape5(*self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise GraphContract(f"item() needs a scalar tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.data.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def scalar(value: float, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full((1, 1, 1, 1, 1), value, dtype=default_dtype()), requires_grad)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Create an op output. backward_fn(g) returns per-parent gradients
    (aligned with parents, None where no gradient flows)."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Reverse-mode accumulation from a scalar root into .grad slots."""
    if tuple(root.data.shape) != (1, 1, 1, 1, 1):
        raise GraphContract(f"backward root must be scalar, got {tuple(root.data.shape)}")
    if not root.requires_grad:
        raise GraphContract("backward root does not require gradients")

    order = _topo_order(root)
    flight: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = flight.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad += g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            held = flight.get(key)
            # pg may alias g or a sibling's gradient; accumulate out-of-place.
            flight[key] = pg if held is None else held + pg


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
