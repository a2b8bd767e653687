"""Pointing game, saliency from binary masks, and monotonicity statistics."""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from analytics.attribution import (AttributionResult, EngineConfig, Objective, check_monotonicity,
                                   curve_monotone, sweep)
from app.config import CONFIG
from app.errors import InputError, NumericalError
from ingestion.dataset import AnnotatedImage, Dataset, Region
from models.loader import load_model
from perturbation.operators import gaussian_blur
from tensor_core import Tensor

logger = logging.getLogger(__name__)


def saliency_from_masks(masks: Sequence[np.ndarray], sigma: Optional[float] = None) -> np.ndarray:
    """Sum of binary masks, blurred with sigma = 9% of the shorter side."""
    if len(masks) == 0:
        raise InputError("saliency needs at least one mask")
    shapes = {np.shape(m) for m in masks}
    if len(shapes) != 1:
        raise InputError(f"masks have different extents: {sorted(shapes)}")
    total = np.sum([np.asarray(m, dtype=np.float64) for m in masks], axis=0)
    if total.ndim != 2:
        raise InputError(f"masks must be H x W, got {total.shape}")
    if sigma is None:
        sigma = CONFIG["SALIENCY_SIGMA_FRACTION"] * min(total.shape)
    return gaussian_blur(Tensor(total), sigma).numpy().astype(np.float64)


def _region_mask(region, shape) -> np.ndarray:
    if isinstance(region, Region):
        return region.mask
    if hasattr(region, "indicator"):
        return region.indicator(*shape) > 0
    return np.asarray(region, dtype=bool)


def pointing_game(saliency: np.ndarray, region) -> bool:
    """Hit iff the global maximum (first in row-major order on ties) lies in the region."""
    saliency = np.asarray(saliency)
    inside = _region_mask(region, saliency.shape)
    if inside.shape != saliency.shape:
        raise InputError(f"region {inside.shape} does not match saliency {saliency.shape}")
    row, col = np.unravel_index(int(np.argmax(saliency)), saliency.shape)
    return bool(inside[row, col])


@dataclass
class PointingResult:
    hits: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    misses: Dict[int, int] = field(default_factory=lambda: defaultdict(int))
    log: List[dict] = field(default_factory=list)
    errors: List[dict] = field(default_factory=list)

    def add(self, item_id: str, class_id: int, hit: bool, difficult: bool):
        (self.hits if hit else self.misses)[class_id] += 1
        self.log.append({"item": item_id, "class": class_id, "hit": hit, "difficult": difficult})

    @staticmethod
    def _ratio(rows) -> Optional[float]:
        rows = list(rows)
        return sum(r["hit"] for r in rows) / len(rows) if rows else None

    @property
    def accuracy(self) -> Optional[float]:
        total = sum(self.hits.values()) + sum(self.misses.values())
        return sum(self.hits.values()) / total if total else None

    @property
    def difficult_accuracy(self) -> Optional[float]:
        return self._ratio(r for r in self.log if r["difficult"])

    def class_accuracy(self) -> Dict[int, float]:
        classes = sorted(set(self.hits) | set(self.misses))
        return {c: self.hits[c] / (self.hits[c] + self.misses[c]) for c in classes}

    def summary(self) -> dict:
        return {
            "all": self.accuracy,
            "difficult": self.difficult_accuracy,
            "evaluated": len(self.log),
            "failed": len(self.errors),
            "per_class": {str(c): acc for c, acc in self.class_accuracy().items()},
        }


class ModelResolver:
    """Loads (and caches) the scorer for an item's class: region model first, then the class default."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._cache: Dict[Path, object] = {}

    def __call__(self, item: AnnotatedImage, class_id: int):
        path = next((r.model_path for r in item.regions if r.class_id == class_id and r.model_path), None)
        path = path or self.dataset.class_models.get(class_id)
        if path is None:
            raise InputError(f"{item.item_id}: no model for class {class_id}")
        if path not in self._cache:
            self._cache[path] = load_model(path)
        return self._cache[path]


def _class_regions(item: AnnotatedImage) -> List[Tuple[int, np.ndarray, bool]]:
    grouped = []
    for class_id in item.classes:
        regions = [r for r in item.regions if r.class_id == class_id]
        mask = np.logical_or.reduce([r.mask for r in regions])
        grouped.append((class_id, mask, any(r.difficult for r in regions)))
    return grouped


def sweep_saliency(model, image: Tensor, engine: EngineConfig, areas: Sequence[float]) -> np.ndarray:
    result = sweep(model, image, areas, engine)
    if result.failures:
        raise NumericalError(f"{len(result.failures)} area(s) failed: {result.failures}")
    threshold = CONFIG["MASK_THRESHOLD"]
    return saliency_from_masks([(r.mask > threshold).astype(np.float64) for r in result.records])


def run_pointing_benchmark(dataset: Dataset, engine: Optional[EngineConfig] = None,
                           areas: Optional[Sequence[float]] = None,
                           model_for: Optional[Callable] = None,
                           saliency_fn: Optional[Callable] = None) -> PointingResult:
    """
    For each (image, class): sweep the pointing area grid, sum the binary masks into a
    saliency map and score a hit when its maximum falls inside the class region.
    Items are evaluated in manifest order; failures are collected, never dropped.
    """
    if not len(dataset):
        raise InputError("pointing benchmark needs a non-empty dataset")
    engine = engine or EngineConfig()
    areas = list(areas or CONFIG["POINTING_AREAS"])
    model_for = model_for or ModelResolver(dataset)
    result = PointingResult()
    for item in dataset:
        image = Tensor(item.image)
        for class_id, region, difficult in _class_regions(item):
            try:
                model = model_for(item, class_id)
                if saliency_fn is not None:
                    saliency = saliency_fn(item, class_id, model)
                else:
                    saliency = sweep_saliency(model, image, engine, areas)
                hit = pointing_game(saliency, region)
            except (InputError, NumericalError) as err:
                logger.error("❌ %s class %d failed: %s", item.item_id, class_id, err)
                result.errors.append({"item": item.item_id, "class": class_id, "error": str(err)})
                continue
            result.add(item.item_id, class_id, hit, difficult)
            logger.info("%s class %d: %s", item.item_id, class_id, "hit" if hit else "miss")
    return result


def dataset_instances(dataset: Dataset, model_for: Optional[Callable] = None) -> Iterable[Tuple[object, Tensor]]:
    model_for = model_for or ModelResolver(dataset)
    for item in dataset:
        for class_id in item.classes:
            yield model_for(item, class_id), Tensor(item.image)


def is_monotone(result: AttributionResult, tolerance: float = 0.0) -> bool:
    """Monotone below a*, or along the whole curve when the sweep found no a*."""
    if result.extremal:
        return check_monotonicity(result, tolerance)
    ordered = sorted(result.records, key=lambda r: r.area)
    return curve_monotone([r.score for r in ordered], result.objective is Objective.DELETION, tolerance)


def monotonicity_rate(instances: Iterable[Tuple[object, Tensor]], engine: Optional[EngineConfig] = None,
                      areas: Optional[Sequence[float]] = None, sweep_fn: Optional[Callable] = None,
                      tolerance: float = 0.0) -> float:
    """Fraction of (model, image) instances whose area sweep is monotone."""
    engine = engine or EngineConfig()
    areas = list(areas or CONFIG["AREAS"])
    sweep_fn = sweep_fn or sweep
    outcomes = [is_monotone(sweep_fn(model, image, areas, engine), tolerance) for model, image in instances]
    if not outcomes:
        raise InputError("monotonicity rate needs at least one instance")
    rate = sum(outcomes) / len(outcomes)
    logger.info("Monotone sweeps: %d of %d", sum(outcomes), len(outcomes))
    return rate
