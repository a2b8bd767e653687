"""
Differentiable operations.

Every function takes Tensors (or python numbers where a scalar is allowed), computes
the value with numpy and records a backward closure on the operands' graph.
Broadcasting is limited to scalar operands: a python number or a 0-d Tensor.
"""
from __future__ import annotations

from numbers import Real
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.errors import InputError
from tensor_core.graph import Tensor, record, working_dtype

Operand = Union[Tensor, float, int]
Axes = Union[None, int, Sequence[int]]

PADDING_MODES = ("zero", "replicate")


def constant(data) -> Tensor:
    return Tensor(data)


def _lift(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if isinstance(value, Real):
        return Tensor._wrap(np.asarray(float(value), dtype=working_dtype()))
    raise InputError(f"unsupported operand type {type(value).__name__}")


def _pair(a: Operand, b: Operand, op: str) -> Tuple[Tensor, Tensor, Tuple[int, ...]]:
    a, b = _lift(a), _lift(b)
    if a.shape == b.shape:
        return a, b, a.shape
    if b.ndim == 0:
        return a, b, a.shape
    if a.ndim == 0:
        return a, b, b.shape
    raise InputError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _fit(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(dtype=np.float64), dtype=grad.dtype).reshape(shape)


# --- elementwise -----------------------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a, b, _ = _pair(a, b, "add")
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_fit(g, a.shape), _fit(g, b.shape)))


def sub(a: Operand, b: Operand) -> Tensor:
    a, b, _ = _pair(a, b, "sub")
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_fit(g, a.shape), _fit(-g, b.shape)))


def mul(a: Operand, b: Operand) -> Tensor:
    a, b, _ = _pair(a, b, "mul")
    return record("mul", a.data * b.data, (a, b),
                  lambda g: (_fit(g * b.data, a.shape), _fit(g * a.data, b.shape)))


def div(a: Operand, b: Operand) -> Tensor:
    a, b, _ = _pair(a, b, "div")
    if np.any(b.data == 0):
        raise InputError("div: division by zero")
    value = a.data / b.data

    def backward(g):
        return _fit(g / b.data, a.shape), _fit(-g * value / b.data, b.shape)

    return record("div", value, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return record("scale", a.data * factor, (a,), lambda g: (g * factor,))


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)
    return record("exp", value, (a,), lambda g: (g * value,))


def relu(a: Tensor) -> Tensor:
    active = a.data > 0
    return record("relu", np.where(active, a.data, 0), (a,), lambda g: (g * active,))


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    """Projection onto [low, high]; identity gradient inside, zero outside."""
    if low > high:
        raise InputError(f"clamp: empty interval [{low}, {high}]")
    inside = (a.data >= low) & (a.data <= high)
    return record("clamp", np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


# --- reductions ------------------------------------------------------------

def _axes(a: Tensor, axis: Axes) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(a.ndim))
    raw = (axis,) if isinstance(axis, int) else tuple(axis)
    resolved = []
    for ax in raw:
        if not -a.ndim <= ax < a.ndim:
            raise InputError(f"invalid axis {ax} for shape {a.shape}")
        resolved.append(ax % a.ndim)
    if len(set(resolved)) != len(resolved):
        raise InputError(f"repeated axis in {raw}")
    return tuple(sorted(resolved))


def _spread(g: np.ndarray, shape, axes) -> np.ndarray:
    return np.broadcast_to(np.expand_dims(g, axes), shape)


def sum(a: Tensor, axis: Axes = None) -> Tensor:  # noqa: A001
    axes = _axes(a, axis)
    value = a.data.sum(axis=axes, dtype=np.float64).astype(a.data.dtype)
    return record("sum", value, (a,), lambda g: (_spread(g, a.shape, axes),))


def mean(a: Tensor, axis: Axes = None) -> Tensor:
    axes = _axes(a, axis)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    value = (a.data.sum(axis=axes, dtype=np.float64) / count).astype(a.data.dtype)
    return record("mean", value, (a,), lambda g: (_spread(g / count, a.shape, axes),))


def max(a: Tensor, axis: Optional[int] = None):  # noqa: A001
    """Maximum and its index; the gradient goes to the first maximal element only."""
    if axis is None:
        index = int(np.argmax(a.data))
        value = a.data.reshape(-1)[index]

        def backward(g):
            grad = np.zeros(a.size, dtype=a.data.dtype)
            grad[index] = g
            return (grad.reshape(a.shape),)

        return record("max", np.asarray(value), (a,), backward), index

    (ax,) = _axes(a, axis)
    index = np.argmax(a.data, axis=ax)
    picked = np.expand_dims(index, ax)
    value = np.take_along_axis(a.data, picked, axis=ax).squeeze(ax)

    def backward(g):
        grad = np.zeros(a.shape, dtype=a.data.dtype)
        np.put_along_axis(grad, picked, np.expand_dims(g, ax), axis=ax)
        return (grad,)

    return record("max", value, (a,), backward), index


# --- structure -------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise InputError(f"cannot reshape {a.shape} to {shape}")
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def crop(a: Tensor, window: Sequence[slice]) -> Tensor:
    window = tuple(window)
    value = a.data[window]
    if value.size == 0:
        raise InputError(f"crop {window} is empty for shape {a.shape}")

    def backward(g):
        grad = np.zeros(a.shape, dtype=g.dtype)
        grad[window] = g
        return (grad,)

    return record("crop", np.array(value), (a,), backward)


def take(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather `a.flat[index]`; index -1 yields 0 (zero padding)."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.max() >= a.size or index.min() < -1):
        raise InputError(f"take: index out of range for {a.size} elements")
    valid = index >= 0
    flat = a.data.reshape(-1)
    value = np.where(valid, flat[np.where(valid, index, 0)], 0).astype(a.data.dtype)
    targets = index[valid]

    def backward(g):
        grad = np.bincount(targets, weights=g[valid], minlength=a.size)
        return (grad.astype(g.dtype).reshape(a.shape),)

    return record("take", value, (a,), backward)


def matmul(w: Tensor, x: Tensor) -> Tensor:
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise InputError(f"matmul: shapes {w.shape} and {x.shape} do not chain")
    value = (w.data.astype(np.float64) @ x.data.astype(np.float64)).astype(w.data.dtype)

    def backward(g):
        return np.outer(g, x.data), (w.data.T.astype(np.float64) @ g).astype(g.dtype)

    return record("matmul", value, (w, x), backward)


# --- convolution -----------------------------------------------------------

def _fold_edges(grad: np.ndarray, ph: int, pw: int) -> np.ndarray:
    # replicate padding: padded cells feed back into the edge they copied
    if ph:
        grad = grad.copy()
        grad[:, ph, :] += grad[:, :ph, :].sum(axis=1)
        grad[:, -ph - 1, :] += grad[:, -ph:, :].sum(axis=1)
        grad = grad[:, ph:-ph, :]
    if pw:
        grad = grad.copy()
        grad[:, :, pw] += grad[:, :, :pw].sum(axis=2)
        grad[:, :, -pw - 1] += grad[:, :, -pw:].sum(axis=2)
        grad = grad[:, :, pw:-pw]
    return grad


def conv2d(x: Tensor, kernel: Tensor, padding: str = "zero") -> Tensor:
    """
    Same-size cross-correlation.

    x is H×W or C×H×W. A 2-D kernel is applied to every channel independently; a
    4-D kernel (Cout×C×kh×kw) mixes channels and yields Cout×H×W.
    """
    if padding not in PADDING_MODES:
        raise InputError(f"conv2d: padding must be one of {PADDING_MODES}, got {padding!r}")
    if x.ndim not in (2, 3):
        raise InputError(f"conv2d: input must be H×W or C×H×W, got {x.shape}")
    planar = x.ndim == 2
    source = x.data[None] if planar else x.data
    channels, height, width = source.shape
    k = kernel.data
    if k.ndim == 2:
        depthwise = True
    elif k.ndim == 4 and not planar and k.shape[1] == channels:
        depthwise = False
    else:
        raise InputError(f"conv2d: kernel {k.shape} does not fit input {x.shape}")
    kh, kw = k.shape[-2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise InputError(f"conv2d: kernel extents must be odd, got {kh}×{kw}")
    ph, pw = kh // 2, kw // 2
    if ph >= height or pw >= width:
        raise InputError(f"conv2d: kernel {kh}×{kw} larger than padded input {height}×{width}")

    mode = "constant" if padding == "zero" else "edge"
    padded = np.pad(source, ((0, 0), (ph, ph), (pw, pw)), mode=mode)
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    if depthwise:
        value = np.einsum("chwij,ij->chw", windows, k, optimize=True)
    else:
        value = np.einsum("chwij,ocij->ohw", windows, k, optimize=True)
    value = value.astype(source.dtype)
    if planar:
        value = value[0]

    def backward(g):
        g3 = g[None] if planar else g
        if depthwise:
            grad_k = np.einsum("chwij,chw->ij", windows, g3, optimize=True)
        else:
            grad_k = np.einsum("chwij,ohw->ocij", windows, g3, optimize=True)
        grad_padded = np.zeros(padded.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                if depthwise:
                    contribution = k[i, j] * g3
                else:
                    contribution = np.einsum("oc,ohw->chw", k[:, :, i, j], g3)
                grad_padded[:, i:i + height, j:j + width] += contribution
        if padding == "zero":
            grad_x = grad_padded[:, ph:ph + height, pw:pw + width]
        else:
            grad_x = _fold_edges(grad_padded, ph, pw)
        if planar:
            grad_x = grad_x[0]
        return np.ascontiguousarray(grad_x), grad_k.astype(g.dtype)

    return record("conv2d", value, (x, kernel), backward)


# --- sorting ---------------------------------------------------------------

def sort_with_permutation(a: Tensor, ties: str = "stable") -> Tuple[Tensor, np.ndarray]:
    """
    Flatten and sort ascending (stable). `perm[i]` is the original index of the i-th
    sorted element. With ties="average" the adjoint of a run of equal sorted values is
    shared evenly across the run.
    """
    if ties not in ("stable", "average"):
        raise InputError(f"ties must be 'stable' or 'average', got {ties!r}")
    flat = a.data.reshape(-1)
    perm = np.argsort(flat, kind="stable")
    ordered = flat[perm]
    if ties == "average":
        run_ids = np.concatenate(([0], np.cumsum(ordered[1:] != ordered[:-1])))
        run_sizes = np.bincount(run_ids)
    else:
        run_ids = run_sizes = None

    def backward(g):
        if run_ids is not None:
            g = (np.bincount(run_ids, weights=g) / run_sizes)[run_ids].astype(g.dtype)
        grad = np.empty(a.size, dtype=g.dtype)
        grad[perm] = g
        return (grad.reshape(a.shape),)

    return record("sort", ordered.copy(), (a,), backward), perm
