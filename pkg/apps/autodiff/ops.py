"""Differentiable primitives.

Shape rules:

* ``add``, ``sub``, ``mul``: identical shapes; or one operand holding a single
  element (scalar broadcast, its rank no larger than the other's); or one
  operand 1-D with length equal to the other's last axis (row broadcast over
  every leading axis). Nothing else broadcasts.
* ``matmul``: (m, k) @ (k, n) only.
* ``concat``: identical shapes except along ``axis``.
* ``select``: basic numpy indexing (ints and slices), no fancy indexing.
* ``reduce_sum`` / ``reduce_mean`` / ``reduce_max``: whole tensor or one axis.
  ``reduce_max`` routes the gradient to the first maximal entry.
* ``unfold``: sliding windows of ``size`` with ``step`` along the last axis,
  (..., n) -> (..., (n - size) // step + 1, size).
* ``pad``: zero padding on the last axis.
* elementwise unary ops keep the shape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from apps.autodiff.exceptions import DomainError, ShapeError
from apps.autodiff.tensor import Tensor

Operand = Tensor | np.ndarray | float | int


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to an operand's shape."""
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.asarray(grad.sum()).reshape(shape)
    leading = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(leading)))


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    if a.size == 1 and a.ndim <= b.ndim or b.size == 1 and b.ndim <= a.ndim:
        return
    if b.ndim == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[0]:
        return
    if a.ndim == 1 and b.ndim >= 2 and b.shape[-1] == a.shape[0]:
        return
    raise ShapeError(op, a.shape, b.shape, detail="only scalar and row broadcasting is supported")


def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward_fn(grad):
        return _reduce_to(grad, a.shape), _reduce_to(grad, b.shape)

    return Tensor.node(a.values + b.values, (a, b), backward_fn, "add")


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward_fn(grad):
        return _reduce_to(grad, a.shape), _reduce_to(-grad, b.shape)

    return Tensor.node(a.values - b.values, (a, b), backward_fn, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward_fn(grad):
        return _reduce_to(grad * b.values, a.shape), _reduce_to(grad * a.values, b.shape)

    return Tensor.node(a.values * b.values, (a, b), backward_fn, "mul")


def matmul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward_fn(grad):
        return grad @ b.values.T, a.values.T @ grad

    return Tensor.node(a.values @ b.values, (a, b), backward_fn, "matmul")


def concat(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    parts = [as_tensor(tensor) for tensor in tensors]
    if not parts:
        raise ShapeError("concat", detail="nothing to concatenate")
    reference = parts[0]
    axis = axis % reference.ndim
    for part in parts[1:]:
        if part.ndim != reference.ndim or any(
            dim != ref for i, (dim, ref) in enumerate(zip(part.shape, reference.shape)) if i != axis
        ):
            raise ShapeError("concat", reference.shape, part.shape, detail=f"axis {axis}")
    boundaries = np.cumsum([part.shape[axis] for part in parts])[:-1]

    def backward_fn(grad):
        return np.split(grad, boundaries, axis=axis)

    return Tensor.node(np.concatenate([part.values for part in parts], axis=axis), parts, backward_fn, "concat")


def select(x: Operand, index) -> Tensor:
    x = as_tensor(x)
    index = index if isinstance(index, tuple) else (index,)
    for item in index:
        if not isinstance(item, (int, np.integer, slice)):
            raise ShapeError("slice", x.shape, detail=f"unsupported index {item!r}")

    def backward_fn(grad):
        full = np.zeros_like(x.values)
        full[index] = grad
        return (full,)

    return Tensor.node(np.array(x.values[index]), (x,), backward_fn, "slice")


def reduce_sum(x: Operand, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def backward_fn(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape),)

    return Tensor.node(np.sum(x.values, axis=axis, keepdims=keepdims), (x,), backward_fn, "sum")


def reduce_mean(x: Operand, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(x: Operand, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        flat_index = int(np.argmax(x.values))

        def backward_fn(grad):
            full = np.zeros_like(x.values)
            full.reshape(-1)[flat_index] = grad
            return (full,)

        return Tensor.node(np.asarray(x.values.reshape(-1)[flat_index]), (x,), backward_fn, "max")

    winners = np.argmax(x.values, axis=axis)
    winners = np.expand_dims(winners, axis)

    def backward_fn(grad):
        full = np.zeros_like(x.values)
        np.put_along_axis(full, winners, np.expand_dims(grad, axis), axis=axis)
        return (full,)

    values = np.take_along_axis(x.values, winners, axis=axis).squeeze(axis)
    return Tensor.node(values, (x,), backward_fn, "max")


def exp(x: Operand) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.values)
    return Tensor.node(out, (x,), lambda grad: (grad * out,), "exp")


def log(x: Operand) -> Tensor:
    x = as_tensor(x)
    if np.any(x.values <= 0):
        raise DomainError(f"log: input has non-positive entries (min {x.values.min()!r})")
    return Tensor.node(np.log(x.values), (x,), lambda grad: (grad / x.values,), "log")


def tanh(x: Operand) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.values)
    return Tensor.node(out, (x,), lambda grad: (grad * (1.0 - out * out),), "tanh")


def sigmoid(x: Operand) -> Tensor:
    x = as_tensor(x)
    out = expit(x.values)
    return Tensor.node(out, (x,), lambda grad: (grad * out * (1.0 - out),), "sigmoid")


def relu(x: Operand) -> Tensor:
    x = as_tensor(x)
    mask = x.values > 0
    return Tensor.node(np.where(mask, x.values, 0.0), (x,), lambda grad: (grad * mask,), "relu")


def absolute(x: Operand) -> Tensor:
    x = as_tensor(x)
    return Tensor.node(np.abs(x.values), (x,), lambda grad: (grad * np.sign(x.values),), "abs")


def square(x: Operand) -> Tensor:
    x = as_tensor(x)
    return Tensor.node(x.values * x.values, (x,), lambda grad: (2.0 * grad * x.values,), "square")


def scale(x: Operand, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    return Tensor.node(x.values * factor, (x,), lambda grad: (grad * factor,), "scale")


def reshape(x: Operand, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.values.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError("reshape", x.shape, tuple(shape)) from exc
    return Tensor.node(out, (x,), lambda grad: (grad.reshape(x.shape),), "reshape")


def transpose(x: Operand, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, detail=f"bad permutation {axes}")
    inverse = tuple(np.argsort(axes))
    return Tensor.node(np.transpose(x.values, axes), (x,), lambda grad: (np.transpose(grad, inverse),), "transpose")


def unfold(x: Operand, size: int, step: int = 1) -> Tensor:
    x = as_tensor(x)
    length = x.shape[-1]
    if size < 1 or step < 1 or length < size:
        raise ShapeError("unfold", x.shape, detail=f"window {size} step {step}")
    windows = np.lib.stride_tricks.sliding_window_view(x.values, size, axis=-1)[..., ::step, :]
    count = windows.shape[-2]
    span = step * (count - 1) + 1

    def backward_fn(grad):
        full = np.zeros_like(x.values)
        for offset in range(size):
            full[..., offset : offset + span : step] += grad[..., :, offset]
        return (full,)

    return Tensor.node(np.ascontiguousarray(windows), (x,), backward_fn, "unfold")


def pad(x: Operand, left: int, right: int) -> Tensor:
    x = as_tensor(x)
    if left == 0 and right == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    length = x.shape[-1]
    return Tensor.node(
        np.pad(x.values, widths), (x,), lambda grad: (grad[..., left : left + length],), "pad"
    )


def clip(x: Operand, low: float, high: float) -> Tensor:
    x = as_tensor(x)
    mask = (x.values >= low) & (x.values <= high)
    return Tensor.node(np.clip(x.values, low, high), (x,), lambda grad: (grad * mask,), "clip")


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "sub": sub,
    "concat": lambda *inputs, axis=0: concat(inputs, axis=axis),
    "slice": select,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "max": reduce_max,
    "abs": absolute,
    "square": square,
    "scale": scale,
    "reshape": reshape,
    "transpose": transpose,
    "unfold": unfold,
    "pad": pad,
    "clip": clip,
}


def forward_op(op: str, *inputs: Operand, **options) -> Tensor:
    try:
        kernel = OPS[op]
    except KeyError:
        raise ValueError(f"Unknown op {op!r}; expected one of {sorted(OPS)}") from None
    return kernel(*inputs, **options)
