"""Local perturbation operators: normalized Gaussian blur and fade-to-black."""
import math

import numpy as np

from app.errors import InputError
from tensor_core import Tensor, ops


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Unnormalized exp(-|u|^2 / 2 sigma^2) on a (2r+1)x(2r+1) grid."""
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    profile = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    return np.outer(profile, profile)


def blur_radius(sigma: float, height: int, width: int) -> int:
    # truncated at 3 sigma, and never wider than the image allows
    return max(0, min(math.ceil(3.0 * sigma), height - 1, width - 1))


def gaussian_blur(image: Tensor, sigma: float) -> Tensor:
    """
    pi_g: per-pixel normalized Gaussian average.

    The denominator sum_v g(u - v) is evaluated at every output pixel, so pixels near
    the border average over the part of the kernel that lies inside the image.
    """
    if sigma < 0:
        raise InputError(f"blur sigma must be >= 0, got {sigma}")
    if image.ndim not in (2, 3):
        raise InputError(f"blur expects HxW or CxHxW, got {image.shape}")
    if sigma == 0:
        return image
    height, width = image.shape[-2:]
    radius = blur_radius(sigma, height, width)
    if radius == 0:
        return image
    kernel = Tensor(gaussian_kernel(sigma, radius))
    numerator = ops.conv2d(image, kernel, padding="zero")
    denominator = ops.conv2d(Tensor(np.ones(image.shape)), kernel, padding="zero")
    return ops.div(numerator, denominator)


def fade_to_black(image: Tensor, sigma: float) -> Tensor:
    """pi_f(x; u, sigma) = (1 - sigma) x(u)."""
    if not 0.0 <= sigma <= 1.0:
        raise InputError(f"fade sigma must lie in [0, 1], got {sigma}")
    return ops.scale(image, 1.0 - sigma)
