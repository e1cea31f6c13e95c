"""Tensor and computation-graph core.

Graphs are define-by-run: every op result keeps references to its parents
and a closure mapping the upstream gradient to one gradient per parent.
Node ids come from a process-wide counter, so sorting the nodes reachable
from a root by id is a topological order (inputs always precede outputs).
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from operator import attrgetter
from typing import Callable, Iterator, Sequence

import numpy as np

from apps.autodiff.exceptions import GradientError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_NODE_IDS = itertools.count()
_RECORDING: ContextVar[bool] = ContextVar("tsgan_autodiff_recording", default=True)


def is_recording() -> bool:
    return _RECORDING.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording parents, e.g. for evaluation-time synthesis."""
    token = _RECORDING.set(False)
    try:
        yield
    finally:
        _RECORDING.reset(token)


class Tensor:
    """A dense real array that can take part in a computation graph.

    Leaves built with ``requires_grad=True`` are parameters: ``backward``
    accumulates into their ``grad``. Op results are built through
    ``Tensor.node`` and never copy their values.
    """

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_NODE_IDS)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: BackwardFn | None = None
        self.op = "leaf"

    @classmethod
    def node(cls, values: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
        tensor = cls.__new__(cls)
        tensor.values = np.asarray(values, dtype=np.float64)
        tensor.grad = None
        tensor.node_id = next(_NODE_IDS)
        tensor.op = op
        if is_recording() and any(parent.requires_grad for parent in parents):
            tensor.requires_grad = True
            tensor.parents = tuple(parents)
            tensor.backward_fn = backward_fn
        else:
            tensor.requires_grad = False
            tensor.parents = ()
            tensor.backward_fn = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> Tensor:
        return Tensor(self.values)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # Operator sugar; the op implementations live in apps.autodiff.ops.

    def __add__(self, other):
        from apps.autodiff import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from apps.autodiff import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from apps.autodiff import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from apps.autodiff import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from apps.autodiff import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from apps.autodiff import ops

        return ops.mul(other, self)

    def __matmul__(self, other):
        from apps.autodiff import ops

        return ops.matmul(self, other)

    def __neg__(self):
        from apps.autodiff import ops

        return ops.scale(self, -1.0)

    def __getitem__(self, index):
        from apps.autodiff import ops

        return ops.select(self, index)


@dataclass(frozen=True)
class Graph:
    """The differentiable nodes reachable from a root, in topological order."""

    nodes: tuple[Tensor, ...]

    @classmethod
    def trace(cls, root: Tensor) -> Graph:
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if node.node_id in seen or not node.requires_grad:
                continue
            seen[node.node_id] = node
            stack.extend(node.parents)
        return cls(tuple(sorted(seen.values(), key=attrgetter("node_id"))))

    def __len__(self) -> int:
        return len(self.nodes)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every reachable parameter."""
    if root.size != 1:
        raise GradientError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return

    graph = Graph.trace(root)
    pending: dict[int, np.ndarray] = {root.node_id: np.ones_like(root.values)}
    for node in reversed(graph.nodes):
        upstream = pending.pop(node.node_id, None)
        if upstream is None:
            continue
        if node.is_leaf:
            node.grad = np.array(upstream) if node.grad is None else node.grad + upstream
            continue
        for parent, grad in zip(node.parents, node.backward_fn(upstream)):
            if grad is None or not parent.requires_grad:
                continue
            previous = pending.get(parent.node_id)
            pending[parent.node_id] = grad if previous is None else previous + grad


def zero_grads(params) -> None:
    for param in params:
        if param.grad is not None:
            param.grad = np.zeros_like(param.values)
