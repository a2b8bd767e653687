"""
Perturbation pyramid and the mask-dosed perturbation m (x) x.

Level l holds pi(x; ., sigma_max * l / L). A mask value m(u) selects the continuous
level (1 - m(u)) * L and the output interpolates linearly between the two
neighbouring levels, which makes the result differentiable in the mask.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.config import CONFIG
from app.errors import InputError
from perturbation.operators import fade_to_black, gaussian_blur
from tensor_core import Tensor, ops

logger = logging.getLogger(__name__)

BLUR = "blur"
FADE = "fade"
KINDS = (BLUR, FADE)

_MASK_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PerturbationPyramid:
    levels: np.ndarray  # (L+1) x C x H x W
    sigma_max: float
    kind: str

    @property
    def depth(self) -> int:
        return self.levels.shape[0] - 1

    @property
    def spatial_shape(self):
        return self.levels.shape[-2:]

    def level(self, index: int) -> Tensor:
        return Tensor(self.levels[index])


def default_sigma_max(kind: str, height: int, width: int) -> float:
    if kind == FADE:
        return 1.0
    return max(CONFIG["BLUR_SIGMA_FLOOR"], CONFIG["BLUR_SIGMA_FRACTION"] * min(height, width))


def build_pyramid(image: Tensor, sigma_max: Optional[float] = None, levels: int = 8,
                  kind: str = BLUR) -> PerturbationPyramid:
    if kind not in KINDS:
        raise InputError(f"perturbation kind must be one of {KINDS}, got {kind!r}")
    if levels < 1:
        raise InputError(f"pyramid needs at least one perturbed level, got L={levels}")
    if image.ndim != 3:
        raise InputError(f"pyramid expects a CxHxW image, got {image.shape}")
    if sigma_max is None:
        sigma_max = default_sigma_max(kind, *image.shape[-2:])
    if sigma_max <= 0:
        raise InputError(f"sigma_max must be positive, got {sigma_max}")
    if kind == FADE and sigma_max > 1:
        raise InputError(f"fade sigma_max must be <= 1, got {sigma_max}")

    operator = gaussian_blur if kind == BLUR else fade_to_black
    stack = [image.data]
    for level in range(1, levels + 1):
        stack.append(operator(image.detach(), sigma_max * level / levels).data)
    logger.debug("built %s pyramid: L=%d sigma_max=%.3f", kind, levels, sigma_max)
    return PerturbationPyramid(np.stack(stack).astype(image.data.dtype), float(sigma_max), kind)


def _check_mask(pyramid: PerturbationPyramid, mask: Tensor):
    if mask.shape != tuple(pyramid.spatial_shape):
        raise InputError(f"mask shape {mask.shape} does not match image {tuple(pyramid.spatial_shape)}")
    low, high = float(mask.data.min()), float(mask.data.max())
    if low < -_MASK_TOLERANCE or high > 1 + _MASK_TOLERANCE:
        raise InputError(f"mask values must lie in [0, 1], got [{low:.4g}, {high:.4g}]")


def apply_mask(pyramid: PerturbationPyramid, mask: Tensor) -> Tensor:
    """(m (x) x)(u) = pi(x; u, sigma_max (1 - m(u))), read off the pyramid."""
    _check_mask(pyramid, mask)
    depth = pyramid.depth
    channels = pyramid.levels.shape[1]
    height, width = pyramid.spatial_shape

    position = (1.0 - np.clip(mask.data, 0.0, 1.0)) * depth
    lower = np.clip(np.floor(position), 0, depth - 1).astype(np.int64)
    lower = np.broadcast_to(lower, (channels, height, width))
    below = np.take_along_axis(pyramid.levels, lower[None], axis=0)[0]
    above = np.take_along_axis(pyramid.levels, lower[None] + 1, axis=0)[0]

    pixel_index = np.broadcast_to(np.arange(height * width).reshape(height, width),
                                  (channels, height, width))
    spread = ops.take(mask, pixel_index)
    fraction = ops.sub(ops.scale(ops.sub(1.0, spread), depth), Tensor(lower.astype(np.float64)))
    return ops.add(Tensor(below), ops.mul(fraction, Tensor(above - below)))
