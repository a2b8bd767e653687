"""Central finite-difference oracle for the reverse-mode engine."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from tensor_core.graph import Graph, Tensor, double_precision

STEP = 1e-3
RTOL = 1e-3
ATOL = 1e-5
COVERAGE = 0.99


@dataclass
class GradCheckReport:
    passed: bool
    coordinates: int
    within_rtol: int
    worst_abs_error: float
    counterexample: Optional[str] = None


def numeric_gradient(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
                     which: int, step: float = STEP) -> np.ndarray:
    base = [np.array(x, dtype=np.float64) for x in inputs]
    grad = np.zeros_like(base[which])
    flat = grad.reshape(-1)
    target = base[which].reshape(-1)
    for i in range(target.size):
        original = target[i]
        target[i] = original + step
        upper = fn([Tensor(x) for x in base]).item()
        target[i] = original - step
        lower = fn([Tensor(x) for x in base]).item()
        target[i] = original
        flat[i] = (upper - lower) / (2 * step)
    return grad


def check_gradient(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
                   step: float = STEP, rtol: float = RTOL, atol: float = ATOL,
                   coverage: float = COVERAGE) -> GradCheckReport:
    """
    Compare analytic adjoints of the scalar `fn(inputs)` with central differences.

    Passes when at least `coverage` of all coordinates agree within `rtol` relative
    error and every other coordinate agrees within `atol` absolute error.
    """
    with double_precision():
        graph = Graph()
        leaves = [graph.leaf(np.asarray(x, dtype=np.float64)) for x in inputs]
        root = fn(leaves)
        grads = graph.backward(root)
        analytic: List[np.ndarray] = [grads[leaf] for leaf in leaves]
        numeric = [numeric_gradient(fn, inputs, i, step) for i in range(len(inputs))]

    a = np.concatenate([g.reshape(-1) for g in analytic])
    n = np.concatenate([g.reshape(-1) for g in numeric])
    abs_err = np.abs(a - n)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
    close = rel_err < rtol
    loose_ok = bool(np.all(abs_err[~close] < atol))
    passed = close.mean() >= coverage and loose_ok
    counterexample = None
    if not passed:
        worst = int(np.argmax(np.where(close, 0, abs_err)))
        counterexample = (f"coordinate {worst}: analytic {a[worst]:.6g} "
                          f"vs numeric {n[worst]:.6g}")
    return GradCheckReport(passed, a.size, int(close.sum()), float(abs_err.max(initial=0.0)),
                           counterexample)
