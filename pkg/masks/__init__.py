from masks.area import AreaTarget, achieved_area, area_loss, reference_vector
from masks.generator import (MaskParams, SmoothMaskConfig, derive_geometry, expand,
                             kernel_profile, max_conv, pool_weights, smax, smax_pool)

__all__ = [
    "AreaTarget", "achieved_area", "area_loss", "reference_vector",
    "MaskParams", "SmoothMaskConfig", "derive_geometry", "expand", "kernel_profile",
    "max_conv", "pool_weights", "smax", "smax_pool",
]
