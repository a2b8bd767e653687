"""
Extremal perturbations: per-area mask optimisation, area sweeps and the extremal area.

For each target area a the engine ascends

    E(m_bar) = game score(m) - lambda(t) * R_a(m) / n,    m = expand(m_bar)

with momentum SGD on the low-resolution parameters m_bar, projecting them back onto
[0, 1] after every step. Parameters start at all ones.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.config import CONFIG
from app.errors import InputError, NumericalError
from masks.area import AreaTarget, achieved_area, area_loss
from masks.generator import BORDERS, MaskParams, SmoothMaskConfig, expand, pool_weights
from perturbation.pyramid import PerturbationPyramid, apply_mask, build_pyramid
from tensor_core import Graph, Tensor, ops

logger = logging.getLogger(__name__)


class Objective(str, Enum):
    PRESERVATION = "preservation"
    DELETION = "deletion"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, value) -> "Objective":
        try:
            return cls(value)
        except ValueError:
            raise InputError(f"objective must be one of {[o.value for o in cls]}, got {value!r}") from None


@dataclass(frozen=True)
class Schedule:
    iterations: int = 1600
    momentum: float = 0.9
    learning_rate: float = 0.05
    lambda0: float = 300.0
    inv_temperature: float = 20.0

    def __post_init__(self):
        if self.iterations < 0:
            raise InputError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.learning_rate <= 0:
            raise InputError(f"learning rate must be positive, got {self.learning_rate}")
        if self.lambda0 < 0:
            raise InputError(f"lambda0 must be >= 0, got {self.lambda0}")
        if self.inv_temperature <= 0:
            raise InputError(f"1/T must be positive, got {self.inv_temperature}")

    @classmethod
    def from_config(cls, **overrides) -> "Schedule":
        values = dict(iterations=CONFIG["ITERATIONS"], momentum=CONFIG["MOMENTUM"],
                      learning_rate=CONFIG["LEARNING_RATE"], lambda0=CONFIG["LAMBDA0"],
                      inv_temperature=CONFIG["INV_TEMPERATURE"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def temperature(self) -> float:
        return 1.0 / self.inv_temperature

    def lam(self, t: int) -> float:
        """lambda0, doubled at 1/3 and again at 2/3 of the iterations."""
        passed = sum(t >= self.iterations * k / 3.0 for k in (1, 2))
        return self.lambda0 * 2 ** passed


@dataclass(frozen=True)
class EngineConfig:
    schedule: Schedule = field(default_factory=Schedule)
    objective: Objective = Objective.PRESERVATION
    step: int = 1
    sigma: float = 1.0
    margin: int = 0
    border: str = "own"
    perturbation: str = "blur"
    levels: int = 8
    sigma_max: Optional[float] = None
    tau: float = 1.0
    deletion_tolerance: float = 0.1
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective.parse(self.objective))
        if self.tau <= 0:
            raise InputError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.deletion_tolerance < 1.0:
            raise InputError(f"deletion tolerance must lie in [0, 1), got {self.deletion_tolerance}")
        if self.threads < 1:
            raise InputError(f"threads must be >= 1, got {self.threads}")
        if self.border not in BORDERS:
            raise InputError(f"mask border must be one of {BORDERS}, got {self.border!r}")

    @classmethod
    def from_config(cls, schedule: Optional[Schedule] = None, **overrides) -> "EngineConfig":
        values = dict(objective=CONFIG["OBJECTIVE"], step=CONFIG["MASK_STEP"], sigma=CONFIG["MASK_SIGMA"],
                      margin=CONFIG["MASK_MARGIN"], border=CONFIG["MASK_BORDER"],
                      perturbation=CONFIG["PERTURBATION"],
                      levels=CONFIG["PYRAMID_LEVELS"], sigma_max=CONFIG["SIGMA_MAX"], tau=CONFIG["TAU"],
                      deletion_tolerance=CONFIG["DELETION_TOLERANCE"], threads=CONFIG["THREADS"])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(schedule=schedule or Schedule.from_config(), **values)

    def mask_config(self, height: int, width: int) -> SmoothMaskConfig:
        return SmoothMaskConfig(sigma=self.sigma, step=self.step, margin=self.margin, border=self.border,
                                temperature=self.schedule.temperature, out_h=height, out_w=width)

    def pyramid(self, image: Tensor) -> PerturbationPyramid:
        return build_pyramid(image, self.sigma_max, self.levels, self.perturbation)


@dataclass
class OptimizationTrace:
    energy: List[float] = field(default_factory=list)
    score: List[float] = field(default_factory=list)
    residual: List[float] = field(default_factory=list)
    lam: List[float] = field(default_factory=list)

    def append(self, energy, score, residual, lam):
        self.energy.append(energy)
        self.score.append(score)
        self.residual.append(residual)
        self.lam.append(lam)

    def __len__(self):
        return len(self.energy)


def _game_score(model, pyramid: PerturbationPyramid, mask: Tensor, objective: Objective):
    """Returns (game score to ascend, preserved score or None, deleted score or None)."""
    preserved = deleted = None
    if objective in (Objective.PRESERVATION, Objective.HYBRID):
        preserved = model(apply_mask(pyramid, mask))
    if objective in (Objective.DELETION, Objective.HYBRID):
        deleted = model(apply_mask(pyramid, ops.sub(1.0, mask)))
    if objective is Objective.PRESERVATION:
        return preserved, preserved, deleted
    if objective is Objective.DELETION:
        return ops.scale(deleted, -1.0), preserved, deleted
    return ops.sub(preserved, deleted), preserved, deleted


def optimize_mask(model, image: Tensor, target: AreaTarget, objective: Objective = Objective.PRESERVATION,
                  schedule: Optional[Schedule] = None, mask_config: Optional[SmoothMaskConfig] = None,
                  pyramid: Optional[PerturbationPyramid] = None):
    """Momentum-SGD ascent of the area-constrained energy; returns (MaskParams, OptimizationTrace)."""
    objective = Objective.parse(objective)
    schedule = schedule or Schedule()
    height, width = image.shape[-2:]
    mask_config = mask_config or SmoothMaskConfig(sigma=1.0, step=1, temperature=schedule.temperature,
                                                  out_h=height, out_w=width)
    if (mask_config.out_h, mask_config.out_w) != (height, width):
        raise InputError(f"mask extents {(mask_config.out_h, mask_config.out_w)} do not match image {(height, width)}")
    if target.n != height * width:
        raise InputError(f"area target counts {target.n} elements, image has {height * width}")
    pyramid = pyramid or build_pyramid(image)
    weights = pool_weights(mask_config)
    n = float(target.n)

    params = MaskParams.full(mask_config).values.astype(np.float64)
    velocity = np.zeros_like(params)
    trace = OptimizationTrace()
    for t in range(schedule.iterations):
        lam = schedule.lam(t)
        try:
            graph = Graph()
            leaf = graph.leaf(params)
            mask = expand(leaf, mask_config, weights)
            game, _, _ = _game_score(model, pyramid, mask, objective)
            residual = ops.scale(area_loss(mask, target), 1.0 / n)
            energy = ops.sub(game, ops.scale(residual, lam))
            grad = graph.backward(energy)[leaf]
        except NumericalError as err:
            raise NumericalError(f"iteration {t} at area {target.a}: {err}", trace) from err
        trace.append(energy.item(), game.item(), residual.item(), lam)
        velocity = schedule.momentum * velocity + grad
        params = np.clip(params + schedule.learning_rate * velocity, 0.0, 1.0)
        if t % 200 == 0:
            logger.debug("a=%.3f t=%d energy=%.5f score=%.5f residual=%.5f", target.a, t,
                         trace.energy[-1], trace.score[-1], trace.residual[-1])
    return MaskParams(params.astype(np.float32)), trace


# --- sweeps ----------------------------------------------------------------

@dataclass
class AreaRecord:
    area: float
    params: np.ndarray
    mask: np.ndarray
    score: float
    preserved_score: float
    deleted_score: float
    area_residual: float
    achieved_area: float
    trace: OptimizationTrace = field(repr=False, default_factory=OptimizationTrace)


@dataclass
class AttributionResult:
    records: List[AreaRecord]
    phi0: float
    objective: Objective = Objective.PRESERVATION
    full_score: float = float("nan")
    a_star: Optional[float] = None
    monotone: Optional[bool] = None
    failures: Dict[float, str] = field(default_factory=dict)

    @property
    def areas(self) -> List[float]:
        return [r.area for r in self.records]

    @property
    def scores(self) -> List[float]:
        return [r.score for r in self.records]

    @property
    def extremal(self) -> bool:
        return self.a_star is not None

    def record(self, area: float) -> AreaRecord:
        for rec in self.records:
            if math.isclose(rec.area, area):
                return rec
        raise InputError(f"no record for area {area}")

    def summary_line(self) -> str:
        return f"a* = {self.a_star:g}" if self.extremal else "not extremal at grid"

    def to_dict(self) -> dict:
        return {
            "objective": self.objective.value,
            "areas": self.areas,
            "scores": self.scores,
            "preserved_scores": [r.preserved_score for r in self.records],
            "deleted_scores": [r.deleted_score for r in self.records],
            "area_residuals": [r.area_residual for r in self.records],
            "achieved_areas": [r.achieved_area for r in self.records],
            "a_star": self.a_star,
            "phi0": self.phi0,
            "full_score": self.full_score,
            "monotone": self.monotone,
            "failures": {str(k): v for k, v in self.failures.items()},
        }


def _check_areas(areas: Sequence[float]) -> List[float]:
    if not areas:
        raise InputError("area grid is empty")
    for a in areas:
        if not 0.0 < a <= 1.0:
            raise InputError(f"sweep areas must lie in (0, 1], got {a}")
    return sorted(set(float(a) for a in areas))


def score_mask(model, pyramid: PerturbationPyramid, mask: np.ndarray):
    """Preserved and deleted scores of a full-resolution mask, off the tape."""
    mask_t = Tensor(np.clip(mask, 0.0, 1.0))
    preserved = model(apply_mask(pyramid, mask_t)).item()
    deleted = model(apply_mask(pyramid, ops.sub(1.0, mask_t))).item()
    return preserved, deleted


def _run_area(model, image, area, engine: EngineConfig, pyramid, mask_config) -> AreaRecord:
    logger.info("Optimising mask for area %.3f (%s)", area, engine.objective.value)
    target = AreaTarget(area, mask_config.out_h * mask_config.out_w)
    params, trace = optimize_mask(model, image, target, engine.objective, engine.schedule,
                                  mask_config, pyramid)
    mask = expand(params.tensor(), mask_config).numpy()
    preserved, deleted = score_mask(model, pyramid, mask)
    score = deleted if engine.objective is Objective.DELETION else preserved
    residual = area_loss(Tensor(mask), target).item() / target.n
    logger.info("Area %.3f done: score %.5f, residual %.2e", area, score, residual)
    return AreaRecord(area, params.values, mask, score, preserved, deleted, residual,
                      achieved_area(mask), trace)


def sweep(model, image: Tensor, areas: Sequence[float], engine: Optional[EngineConfig] = None,
          phi0: Optional[float] = None) -> AttributionResult:
    """One independent optimisation per area; records come back sorted by area."""
    engine = engine or EngineConfig()
    areas = _check_areas(areas)
    pyramid = engine.pyramid(image)
    mask_config = engine.mask_config(*image.shape[-2:])
    full_score = model(image).item()
    phi0 = engine.tau * full_score if phi0 is None else float(phi0)

    records, failures = [], {}
    with ThreadPoolExecutor(max_workers=engine.threads) as pool:
        futures = {a: pool.submit(_run_area, model, image, a, engine, pyramid, mask_config) for a in areas}
        for a in areas:
            try:
                records.append(futures[a].result())
            except (InputError, NumericalError) as err:
                logger.error("❌ Area %.3f failed: %s", a, err)
                failures[a] = str(err)

    result = AttributionResult(records, phi0, engine.objective, full_score, failures=failures)
    result.a_star = find_extremal(result, phi0, engine.objective, engine.deletion_tolerance)
    if result.extremal:
        result.monotone = check_monotonicity(result)
    else:
        logger.info("No area in %s reaches phi0=%.5f", areas, phi0)
    return result


def find_extremal(result: AttributionResult, phi0: float, objective: Objective = Objective.PRESERVATION,
                  deletion_tolerance: float = 0.1) -> Optional[float]:
    """Smallest recorded area meeting the threshold, or None when no area qualifies."""
    objective = Objective.parse(objective)
    for rec in sorted(result.records, key=lambda r: r.area):
        if objective is Objective.DELETION:
            if rec.score <= phi0 * (1.0 - deletion_tolerance):
                return rec.area
        elif rec.score >= phi0:
            return rec.area
    return None


def curve_monotone(scores: Sequence[float], decreasing: bool = False, tolerance: float = 0.0) -> bool:
    steps = np.diff(np.asarray(scores, dtype=np.float64))
    if decreasing:
        steps = -steps
    return bool(np.all(steps >= -tolerance))


def check_monotonicity(result: AttributionResult, tolerance: float = 0.0) -> bool:
    """Scores of all records below a* must be non-decreasing (non-increasing for deletion)."""
    if result.a_star is None:
        raise InputError("monotonicity is defined below a*, and this result has none")
    below = [r.score for r in sorted(result.records, key=lambda r: r.area) if r.area < result.a_star]
    return curve_monotone(below, result.objective is Objective.DELETION, tolerance)


def with_schedule(engine: EngineConfig, **changes) -> EngineConfig:
    return replace(engine, schedule=replace(engine.schedule, **changes))
