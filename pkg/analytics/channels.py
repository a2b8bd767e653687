"""
Channel attribution at an intermediate layer.

The spatial machinery is replaced by a vector mask with one entry per channel of the
split activation, broadcast along the spatial extents. The area constraint is the
same rank-order loss, with an integer number of channels as the target.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.config import CONFIG
from app.errors import InputError, NumericalError
from masks.area import AreaTarget, area_loss
from models.zoo import SplitModel
from tensor_core import Graph, Tensor, ops

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelSchedule:
    iterations: int = 300
    momentum: float = 0.9
    learning_rate: float = 1e-2
    lambda_max: float = 1500.0
    ramp_fraction: float = 0.5

    def __post_init__(self):
        if self.iterations < 0:
            raise InputError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.learning_rate <= 0:
            raise InputError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.ramp_fraction <= 1.0:
            raise InputError(f"ramp fraction must lie in (0, 1], got {self.ramp_fraction}")

    @classmethod
    def from_config(cls, **overrides) -> "ChannelSchedule":
        values = dict(iterations=CONFIG["CHANNEL_ITERATIONS"], momentum=CONFIG["MOMENTUM"],
                      learning_rate=CONFIG["CHANNEL_LEARNING_RATE"], lambda_max=CONFIG["CHANNEL_LAMBDA_MAX"],
                      ramp_fraction=CONFIG["CHANNEL_RAMP_FRACTION"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def lam(self, t: int) -> float:
        """Linear ramp 0 -> lambda_max over the first `ramp_fraction` of the run, then flat."""
        ramp = self.ramp_fraction * self.iterations
        if ramp <= 0:
            return self.lambda_max
        return self.lambda_max * min(1.0, t / ramp)


def apply_channel_mask(mask: Tensor, activation: Tensor) -> Tensor:
    if activation.ndim != 3 or mask.shape != (activation.shape[0],):
        raise InputError(f"channel mask {mask.shape} does not fit activation {activation.shape}")
    channels, height, width = activation.shape
    index = np.broadcast_to(np.arange(channels).reshape(-1, 1, 1), (channels, height, width))
    return ops.mul(ops.take(mask, index), activation)


def optimize_channel_mask(split: SplitModel, image: Tensor, count: int,
                          schedule: Optional[ChannelSchedule] = None):
    """Keep `count` channels; returns (mask vector, per-iteration energy trace)."""
    schedule = schedule or ChannelSchedule()
    channels = split.channels
    if not 1 <= count <= channels:
        raise InputError(f"channel count must lie in [1, {channels}], got {count}")
    target = AreaTarget.from_count(count, channels)
    activation = split.head(image).detach()

    params = np.ones(channels, dtype=np.float64)
    velocity = np.zeros_like(params)
    trace: List[float] = []
    for t in range(schedule.iterations):
        try:
            graph = Graph()
            leaf = graph.leaf(params)
            score = split.tail(apply_channel_mask(leaf, activation))
            penalty = ops.scale(area_loss(leaf, target), schedule.lam(t) / channels)
            energy = ops.sub(score, penalty)
            grad = graph.backward(energy)[leaf]
        except NumericalError as err:
            raise NumericalError(f"channel iteration {t} (count {count}): {err}", trace) from err
        trace.append(energy.item())
        velocity = schedule.momentum * velocity + grad
        params = np.clip(params + schedule.learning_rate * velocity, 0.0, 1.0)
    return params.astype(np.float32), trace


@dataclass
class ChannelRecord:
    count: int
    mask: np.ndarray
    score: float
    trace: List[float] = field(repr=False, default_factory=list)

    @property
    def selected(self) -> List[int]:
        """Indices of the `count` largest mask entries, lowest index first on ties."""
        order = np.argsort(-self.mask, kind="stable")[: self.count]
        return sorted(int(k) for k in order)


@dataclass
class ChannelResult:
    records: List[ChannelRecord]
    phi0: float
    full_score: float
    a_star: Optional[int] = None

    def record(self, count: int) -> ChannelRecord:
        for rec in self.records:
            if rec.count == count:
                return rec
        raise InputError(f"no channel record for count {count}")

    def to_dict(self) -> dict:
        return {
            "counts": [r.count for r in self.records],
            "scores": [r.score for r in self.records],
            "selected": {str(r.count): r.selected for r in self.records},
            "a_star": self.a_star,
            "phi0": self.phi0,
            "full_score": self.full_score,
        }


def _run_count(split, image, count, schedule) -> ChannelRecord:
    logger.info("Optimising channel mask for %d of %d channels", count, split.channels)
    mask, trace = optimize_channel_mask(split, image, count, schedule)
    activation = split.head(image)
    score = split.tail(apply_channel_mask(Tensor(mask), activation)).item()
    return ChannelRecord(count, mask, score, trace)


def sweep_channels(split: SplitModel, image: Tensor, counts: Sequence[int], phi0: Optional[float] = None,
                   schedule: Optional[ChannelSchedule] = None, threads: int = 1) -> ChannelResult:
    if not counts:
        raise InputError("channel grid is empty")
    counts = sorted(set(int(c) for c in counts))
    for c in counts:
        if not 1 <= c <= split.channels:
            raise InputError(f"channel count {c} outside [1, {split.channels}]")
    full_score = split.forward(image).item()
    phi0 = full_score if phi0 is None else float(phi0)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        records = list(pool.map(lambda c: _run_count(split, image, c, schedule), counts))
    result = ChannelResult(records, phi0, full_score)
    result.a_star = next((r.count for r in records if r.score >= phi0), None)
    return result


def find_extremal_channels(split: SplitModel, image: Tensor, counts: Sequence[int], phi0: float,
                           schedule: Optional[ChannelSchedule] = None) -> Optional[int]:
    return sweep_channels(split, image, counts, phi0, schedule).a_star


def saliency_overlay(mask, activation: Tensor) -> Tensor:
    """v = sum_k m_k * activation_k, an H x W map."""
    mask = mask if isinstance(mask, Tensor) else Tensor(mask)
    return ops.sum(apply_channel_mask(mask, activation), axis=0)


def per_class_mask(masks: Sequence[np.ndarray]) -> Tuple[np.ndarray, int]:
    """Mean of a class's channel masks and its most important channel (lowest index on ties)."""
    if not masks:
        raise InputError("per-class aggregation needs at least one mask")
    stacked = np.stack([np.asarray(m, dtype=np.float64) for m in masks])
    if stacked.ndim != 2:
        raise InputError("channel masks must be vectors of equal length")
    mean = stacked.mean(axis=0)
    return mean, int(np.argmax(mean))


def masked_activation(split: SplitModel, image: Tensor, mask) -> Tensor:
    mask = mask if isinstance(mask, Tensor) else Tensor(mask)
    return apply_channel_mask(mask, split.head(image).detach())


def _project_ball(image: np.ndarray, budget: float) -> np.ndarray:
    norm = float(np.linalg.norm(image))
    return image if norm <= budget else image * (budget / norm)


def feature_inversion(split: SplitModel, target: Tensor, steps: int = 200, lr: float = 0.1,
                      budget: Optional[float] = None):
    """
    Projected gradient ascent of <target, head(I)> over ||I|| <= budget.

    Starts from a constant image on the sphere ||I|| = budget (default 0.5 * sqrt(n)).
    Returns the final image and the objective after each step.
    """
    if target.shape != split.activation_shape:
        raise InputError(f"inversion target {target.shape} does not match activation {split.activation_shape}")
    if steps < 0:
        raise InputError(f"steps must be >= 0, got {steps}")
    size = int(np.prod(split.input_shape))
    budget = 0.5 * np.sqrt(size) if budget is None else float(budget)
    if budget <= 0:
        raise InputError(f"norm budget must be positive, got {budget}")

    image = np.full(split.input_shape, budget / np.sqrt(size), dtype=np.float64)
    trace: List[float] = []
    for step in range(steps):
        try:
            graph = Graph()
            leaf = graph.leaf(image)
            objective = ops.sum(ops.mul(target, split.head(leaf)))
            grad = graph.backward(objective)[leaf]
        except NumericalError as err:
            raise NumericalError(f"inversion step {step}: {err}", trace) from err
        trace.append(objective.item())
        image = _project_ball(image + lr * grad, budget)
    if steps:
        final = ops.sum(ops.mul(target, split.head(Tensor(image)))).item()
        if not np.isfinite(final):
            raise NumericalError("inversion objective diverged", trace)
        trace.append(final)
    logger.info("Feature inversion finished after %d steps", steps)
    return image.astype(np.float32), trace
