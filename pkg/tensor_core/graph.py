"""
Dense float tensors and the tape that records operations on them.

A Tensor is an immutable numpy array plus an optional link to the Graph node that
produced it. Operations whose operands are all detached return detached tensors, so
constants (images, pyramid levels, pool weights) never enter a tape. One Graph is
built per optimisation step and thrown away afterwards.
"""
from __future__ import annotations

import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import InputError, NumericalError

logger = logging.getLogger(__name__)

_DTYPE = contextvars.ContextVar("tensor_dtype", default=np.float32)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def working_dtype():
    return _DTYPE.get()


@contextlib.contextmanager
def double_precision() -> Iterator[None]:
    """Evaluate tensor arithmetic in float64 inside the block."""
    token = _DTYPE.set(np.float64)
    try:
        yield
    finally:
        _DTYPE.reset(token)


class Tensor:
    __slots__ = ("data", "graph", "node")

    def __init__(self, data, graph: Optional["Graph"] = None, node: Optional[int] = None):
        array = np.asarray(data, dtype=_DTYPE.get())
        if array is data:
            array = array.copy()
        self._bind(array, graph, node)

    @classmethod
    def _wrap(cls, array: np.ndarray, graph=None, node=None) -> "Tensor":
        # fresh arrays produced by ops; skip the defensive copy
        tensor = cls.__new__(cls)
        tensor._bind(np.asarray(array, dtype=_DTYPE.get()), graph, node)
        return tensor

    def _bind(self, array, graph, node):
        if any(extent <= 0 for extent in array.shape):
            raise InputError(f"tensor extents must be positive, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NumericalError(f"non-finite values in tensor of shape {array.shape}")
        array.setflags(write=False)
        self.data = array
        self.graph = graph
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def attached(self) -> bool:
        return self.graph is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise InputError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __add__(self, other):
        from tensor_core import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from tensor_core import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from tensor_core import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from tensor_core import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from tensor_core import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from tensor_core import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from tensor_core import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from tensor_core import ops
        return ops.div(other, self)

    def __neg__(self):
        from tensor_core import ops
        return ops.scale(self, -1.0)

    def __repr__(self):
        where = f"node={self.node}" if self.attached else "detached"
        return f"Tensor(shape={self.shape}, {where})"


@dataclass
class _Node:
    op: str
    parents: Tuple[Optional[int], ...]
    backward: Optional[BackwardFn]


class GradientMap:
    """Adjoints produced by one backward pass."""

    def __init__(self, graph: "Graph", adjoints: List[Optional[np.ndarray]]):
        self._graph = graph
        self._adjoints = adjoints

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        if tensor.graph is not self._graph or tensor.node is None:
            raise InputError("tensor does not belong to this graph")
        adjoint = None
        if tensor.node < len(self._adjoints):
            adjoint = self._adjoints[tensor.node]
        if adjoint is None:
            return np.zeros(tensor.shape, dtype=tensor.data.dtype)
        return np.asarray(adjoint, dtype=tensor.data.dtype).reshape(tensor.shape)

    def reached(self, tensor: Tensor) -> bool:
        return tensor.node is not None and tensor.node < len(self._adjoints) \
            and self._adjoints[tensor.node] is not None


class Graph:
    """Append-only tape; recording order is a topological order."""

    def __init__(self):
        self.nodes: List[_Node] = []
        self.values: List[np.ndarray] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data, op: str = "leaf") -> Tensor:
        tensor = Tensor(data)
        return self._append(op, tensor.data, (), None)

    def record(self, op: str, value: np.ndarray, parents: Sequence[Tensor],
               backward: BackwardFn) -> Tensor:
        indices = []
        for parent in parents:
            if parent.graph is None:
                indices.append(None)
            elif parent.graph is self:
                indices.append(parent.node)
            else:
                raise InputError(f"{op}: operands belong to different graphs")
        return self._append(op, value, tuple(indices), backward)

    def _append(self, op, value, parents, backward) -> Tensor:
        tensor = Tensor._wrap(value, self, len(self.nodes))
        self.nodes.append(_Node(op, parents, backward))
        self.values.append(tensor.data)
        return tensor

    def backward(self, root: Tensor) -> GradientMap:
        if root.graph is not self or root.node is None:
            raise InputError("backward root is not recorded on this graph")
        if root.data.size != 1:
            raise InputError(f"backward needs a scalar root, got shape {root.shape}")

        adjoints: List[Optional[np.ndarray]] = [None] * (root.node + 1)
        adjoints[root.node] = np.ones_like(root.data)
        for index in range(root.node, -1, -1):
            adjoint = adjoints[index]
            node = self.nodes[index]
            if adjoint is None or node.backward is None:
                continue
            grads = node.backward(adjoint)
            for parent, grad in zip(node.parents, grads):
                if parent is None or grad is None:
                    continue
                if adjoints[parent] is None:
                    adjoints[parent] = grad
                else:
                    adjoints[parent] = adjoints[parent] + grad

        for index, adjoint in enumerate(adjoints):
            if adjoint is not None and not np.all(np.isfinite(adjoint)):
                raise NumericalError(f"non-finite adjoint at node {index} ({self.nodes[index].op})")
        logger.debug("backward over %d nodes", root.node + 1)
        return GradientMap(self, adjoints)


def record(op: str, value: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Record `value` on the graph shared by `parents`, or return it detached."""
    graph = None
    for parent in parents:
        if parent.graph is None:
            continue
        if graph is None:
            graph = parent.graph
        elif parent.graph is not graph:
            raise InputError(f"{op}: operands belong to different graphs")
    if graph is None:
        return Tensor._wrap(value)
    return graph.record(op, value, parents, backward)


def backward(graph: Graph, root: Tensor) -> GradientMap:
    return graph.backward(root)
