"""Rank-order area constraint R_a(m) = ||vecsort(m) - r_a||^2."""
import math
from dataclasses import dataclass, field

import numpy as np

from app.errors import InputError
from tensor_core import Tensor, ops


@dataclass(frozen=True)
class AreaTarget:
    a: float
    n: int
    split: int = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise InputError(f"area target needs at least one element, got n={self.n}")
        if not 0.0 <= self.a <= 1.0:
            raise InputError(f"area fraction must lie in [0, 1], got {self.a}")
        # round half up on a*n
        object.__setattr__(self, "split", min(self.n, int(math.floor(self.a * self.n + 0.5))))

    @classmethod
    def from_count(cls, count: int, n: int) -> "AreaTarget":
        """Integer target used by channel masks: exactly `count` of `n` entries kept."""
        if not 0 <= count <= n:
            raise InputError(f"channel count must lie in [0, {n}], got {count}")
        return cls(count / n, n)

    @property
    def ones(self) -> int:
        return self.split


def reference_vector(target: AreaTarget) -> np.ndarray:
    r = np.zeros(target.n, dtype=np.float64)
    if target.ones:
        r[target.n - target.ones:] = 1.0
    return r


def area_loss(mask: Tensor, target: AreaTarget) -> Tensor:
    if mask.size != target.n:
        raise InputError(f"mask has {mask.size} elements, target expects {target.n}")
    ordered, _ = ops.sort_with_permutation(mask, ties="average")
    residual = ops.sub(ordered, Tensor(reference_vector(target)))
    return ops.sum(ops.mul(residual, residual))


def achieved_area(mask, threshold: float = 0.5) -> float:
    values = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return float(np.count_nonzero(values > threshold)) / values.size
