"""
Smooth mask generator.

A low-resolution parameter mask m_bar (N_h x N_w, values in [0,1]) is expanded to a
full-resolution mask by max-convolution with a radial kernel that is flat up to
radius sigma and then decays. The expansion follows the unpool -> nearest upsample ->
weighted pool -> crop pipeline:

    m'_{k,i}  = m_bar[i + k - P]                      (unpool, window K, padding P)
    m''_{k,u} = m'_{k, floor(u / s)}                  (nearest upsample W' -> W'')
    m(u)      = pool_k g_{k,u} m''_{k,u}              (max or smax)

Sample i sits at pixel b + s*i of the upsampled grid; the final mask is the
out_h x out_w crop starting at (b, b).
"""
import functools
import logging
import math
from dataclasses import dataclass

import numpy as np

from app.errors import InputError
from tensor_core import Tensor, ops

logger = logging.getLogger(__name__)

# off-lattice window slots: repeat the window's own sample, or read as zero
BORDERS = ("own", "zero")


@dataclass(frozen=True)
class SmoothMaskConfig:
    sigma: float
    step: int
    margin: int = 0
    temperature: float = 0.05
    out_h: int = 64
    out_w: int = 64
    border: str = "own"

    def __post_init__(self):
        if self.step < 1:
            raise InputError(f"mask step must be >= 1, got {self.step}")
        if self.sigma <= 0:
            raise InputError(f"mask sigma must be > 0, got {self.sigma}")
        if self.margin < 0:
            raise InputError(f"mask margin must be >= 0, got {self.margin}")
        if self.temperature <= 0:
            raise InputError(f"smax temperature must be > 0, got {self.temperature}")
        if self.out_h < 1 or self.out_w < 1:
            raise InputError(f"mask extents must be positive, got {self.out_h}x{self.out_w}")
        if self.border not in BORDERS:
            raise InputError(f"mask border must be one of {BORDERS}, got {self.border!r}")
        geometry = derive_geometry(self)
        for axis, out in ((geometry.rows, self.out_h), (geometry.cols, self.out_w)):
            if axis.upsampled < out + self.margin:
                raise InputError(
                    f"crop of {out} px at offset {self.margin} exceeds upsampled extent {axis.upsampled}")

    @property
    def geometry(self) -> "MaskGeometry":
        return derive_geometry(self)

    @property
    def param_shape(self):
        geometry = derive_geometry(self)
        return geometry.rows.samples, geometry.cols.samples


@dataclass(frozen=True)
class AxisGeometry:
    samples: int     # N
    padding: int     # P
    radius: int      # R
    window: int      # K
    pooled: int      # W'
    upsampled: int   # W''


@dataclass(frozen=True)
class MaskGeometry:
    rows: AxisGeometry
    cols: AxisGeometry

    @property
    def window(self) -> int:
        return self.rows.window


def axis_geometry(out: int, sigma: float, step: int, margin: int) -> AxisGeometry:
    samples = math.ceil(out / step)
    padding = 1 + math.ceil((sigma + margin) / step)
    radius = 1 + math.ceil(sigma / step)
    window = 2 * radius + 1
    pooled = samples - window + 2 * padding + 1
    return AxisGeometry(samples, padding, radius, window, pooled, step * pooled)


def derive_geometry(config: SmoothMaskConfig) -> MaskGeometry:
    return MaskGeometry(
        rows=axis_geometry(config.out_h, config.sigma, config.step, config.margin),
        cols=axis_geometry(config.out_w, config.sigma, config.step, config.margin),
    )


def kernel_profile(z):
    """k(z) = exp(-max(0, z - 1)^2 / 4): flat up to z = 1, then a smooth decay."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0):
        raise InputError("kernel profile is defined for z >= 0 only")
    return np.exp(-np.maximum(0.0, z - 1.0) ** 2 / 4.0)


@dataclass(frozen=True)
class PoolWeights:
    weights: np.ndarray  # K^2 x W''_h x W''_w, g_{k,u}
    config: SmoothMaskConfig


def _sample_offsets(axis: AxisGeometry, step: int, margin: int):
    """Per window slot k and output u: lattice index floor(u/s)+k-P and distance to it."""
    u = np.arange(axis.upsampled)
    lattice = u[None, :] // step + np.arange(axis.window)[:, None] - axis.padding
    distance = u[None, :] - (margin + step * lattice)
    return lattice, distance


@functools.lru_cache(maxsize=32)
def pool_weights(config: SmoothMaskConfig) -> PoolWeights:
    geometry = derive_geometry(config)
    _, dy = _sample_offsets(geometry.rows, config.step, config.margin)
    _, dx = _sample_offsets(geometry.cols, config.step, config.margin)
    window = geometry.window
    weights = np.empty((window * window, geometry.rows.upsampled, geometry.cols.upsampled))
    for ky in range(window):
        for kx in range(window):
            radial = np.hypot(dy[ky][:, None], dx[kx][None, :])
            weights[ky * window + kx] = kernel_profile(radial / config.sigma)
    weights.setflags(write=False)
    logger.debug("pool weights for %s: %s", config, weights.shape)
    return PoolWeights(weights, config)


def unpool(params: Tensor, config: SmoothMaskConfig) -> Tensor:
    """
    m'_{k,i} = m_bar[i + k - P], shape K^2 x W'_h x W'_w.

    With the "own" border, slots that fall off the lattice repeat the window's own
    sample m_bar[i + R - P] (clipped to the lattice), so a uniform m_bar expands to the
    same value at every pixel of a unit-step mask. The "zero" border reads them as 0,
    which lifts border pixels above the interior under smax pooling.
    """
    geometry = derive_geometry(config)
    rows, cols = geometry.rows, geometry.cols
    if params.shape != (rows.samples, cols.samples):
        raise InputError(f"parameter mask {params.shape} does not match geometry "
                         f"{(rows.samples, cols.samples)}")
    iy = np.arange(rows.pooled)[None, :] + np.arange(rows.window)[:, None] - rows.padding
    ix = np.arange(cols.pooled)[None, :] + np.arange(cols.window)[:, None] - cols.padding
    own_y = np.clip(np.arange(rows.pooled) + rows.radius - rows.padding, 0, rows.samples - 1)
    own_x = np.clip(np.arange(cols.pooled) + cols.radius - cols.padding, 0, cols.samples - 1)
    own = own_y[:, None] * cols.samples + own_x[None, :]
    if config.border == "zero":
        own = np.full_like(own, -1)
    index = np.empty((rows.window, cols.window, rows.pooled, cols.pooled), dtype=np.int64)
    for ky in range(rows.window):
        valid_y = (iy[ky] >= 0) & (iy[ky] < rows.samples)
        for kx in range(cols.window):
            valid_x = (ix[kx] >= 0) & (ix[kx] < cols.samples)
            flat = iy[ky][:, None] * cols.samples + ix[kx][None, :]
            index[ky, kx] = np.where(valid_y[:, None] & valid_x[None, :], flat, own)
    return ops.take(params, index.reshape(-1, rows.pooled, cols.pooled))


def upsample(unpooled: Tensor, config: SmoothMaskConfig) -> Tensor:
    """Nearest-neighbour upsampling W' -> W'' = s W'."""
    slots, pooled_h, pooled_w = unpooled.shape
    s = config.step
    uy = np.arange(pooled_h * s) // s
    ux = np.arange(pooled_w * s) // s
    index = (np.arange(slots)[:, None, None] * pooled_h * pooled_w
             + uy[None, :, None] * pooled_w + ux[None, None, :])
    return ops.take(unpooled, index)


def _weighted_window(params: Tensor, config: SmoothMaskConfig, weights: PoolWeights = None) -> Tensor:
    weights = weights or pool_weights(config)
    if weights.config != config:
        raise InputError("pool weights were built for a different mask configuration")
    spread = upsample(unpool(params, config), config)
    return ops.mul(spread, Tensor(weights.weights))


def _crop(mask: Tensor, config: SmoothMaskConfig) -> Tensor:
    b = config.margin
    return ops.crop(mask, (slice(b, b + config.out_h), slice(b, b + config.out_w)))


def smax(values: Tensor, temperature: float, axis: int = 0) -> Tensor:
    """
    Temperature-controlled soft maximum along `axis`:
    sum f e^{f/T} / sum e^{f/T}, stabilised by subtracting the per-slice maximum.
    """
    if temperature <= 0:
        raise InputError(f"smax temperature must be > 0, got {temperature}")
    peak = np.broadcast_to(values.data.max(axis=axis, keepdims=True), values.shape)
    weights = ops.exp(ops.scale(ops.sub(values, Tensor(peak)), 1.0 / temperature))
    return ops.div(ops.sum(ops.mul(values, weights), axis=axis), ops.sum(weights, axis=axis))


def max_conv(params: Tensor, config: SmoothMaskConfig, weights: PoolWeights = None) -> Tensor:
    """Hard max-convolution m(u) = max_k g_{k,u} m''_{k,u}, cropped to out_h x out_w."""
    pooled, _ = ops.max(_weighted_window(params, config, weights), axis=0)
    return _crop(pooled, config)


def smax_pool(params: Tensor, config: SmoothMaskConfig, weights: PoolWeights = None) -> Tensor:
    """Smooth pooling over the window; returns the uncropped W''_h x W''_w mask."""
    return smax(_weighted_window(params, config, weights), config.temperature, axis=0)


def expand(params: Tensor, config: SmoothMaskConfig, weights: PoolWeights = None) -> Tensor:
    return ops.clamp(_crop(smax_pool(params, config, weights), config), 0.0, 1.0)


@dataclass(frozen=True)
class MaskParams:
    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise InputError("mask parameters must lie in [0, 1]")

    @classmethod
    def full(cls, config: SmoothMaskConfig, value: float = 1.0) -> "MaskParams":
        return cls(np.full(config.param_shape, value, dtype=np.float32))

    def tensor(self) -> Tensor:
        return Tensor(self.values)
