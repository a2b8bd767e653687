"""
Invariant suites run by `selftest`: gradient integrity, the max-convolution
guarantees, and the smax temperature limits.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from masks.area import AreaTarget, area_loss
from masks.generator import SmoothMaskConfig, expand, kernel_profile, max_conv, smax
from models.zoo import Box, additive_channel_model, planted_channel_model, planted_region_model
from perturbation.operators import gaussian_blur
from perturbation.pyramid import apply_mask, build_pyramid
from tensor_core import Tensor, double_precision, ops
from tensor_core.gradcheck import check_gradient

logger = logging.getLogger(__name__)

# full-coverage geometry: every window reaches every lattice sample
LEMMA_GEOMETRY = dict(sigma=8.0, step=4, margin=0, out_h=16, out_w=16)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    counterexample: Optional[str] = None


def gradient_cases(rng) -> Dict[str, tuple]:
    x = rng.normal(size=(2, 5, 5))
    # keep inputs clear of the relu, clamp and argmax kinks
    base = rng.uniform(0.1, 0.7, size=(2, 5, 5))
    branch = rng.integers(0, 3, size=(2, 5, 5))
    kinked = np.where(branch == 0, -base, np.where(branch == 1, base, base + 0.9))
    separated = x.copy()
    separated[1] = x[0] + rng.choice([-1.0, 1.0], size=(5, 5)) * rng.uniform(0.1, 1.0, size=(5, 5))
    levels = (rng.integers(0, 4, size=(6, 6)) + rng.uniform(0.1, 0.9, size=(6, 6))) / 4.0
    positive = rng.uniform(0.5, 1.5, size=(2, 5, 5))
    distinct = rng.permutation(12) / 12.0 + rng.uniform(0, 0.01, size=12)
    image = rng.uniform(0.1, 1.0, size=(3, 6, 6))
    pyramid = build_pyramid(Tensor(image), sigma_max=2.0, levels=4)
    mask_config = SmoothMaskConfig(sigma=2.0, step=2, temperature=0.1, out_h=6, out_w=6)
    small = (3, 6, 6)
    region = planted_region_model(Box(1, 1, 3, 3), 2.0, small)
    channels = planted_channel_model([0, 2], n_channels=4, input_shape=small)
    additive = additive_channel_model(n_channels=4, input_shape=small)
    return {
        "mul/add": (lambda t: ops.sum(ops.add(ops.mul(t[0], t[1]), t[0])), [x, x[::-1].copy()]),
        "div/exp": (lambda t: ops.sum(ops.div(ops.exp(t[0]), t[1])), [x * 0.3, positive]),
        "relu/clamp": (lambda t: ops.sum(ops.clamp(ops.relu(t[0]), 0.0, 0.8)), [kinked]),
        "mean/max": (lambda t: ops.add(ops.mean(t[0]), ops.sum(ops.max(t[0], axis=0)[0])), [separated]),
        "conv2d zero": (lambda t: ops.sum(ops.mul(ops.conv2d(t[0], t[1]), t[0])), [x, rng.normal(size=(3, 3))]),
        "conv2d replicate": (lambda t: ops.sum(ops.mul(ops.conv2d(t[0], t[1], "replicate"), t[0])),
                             [x, rng.normal(size=(2, 2, 3, 3))]),
        "sort": (lambda t: ops.sum(ops.mul(ops.sort_with_permutation(t[0])[0], t[1])), [distinct, np.arange(12.0)]),
        "blur": (lambda t: ops.sum(ops.mul(gaussian_blur(t[0], 1.0), t[0])), [x]),
        "apply_mask": (lambda t: ops.sum(apply_mask(pyramid, t[0])), [levels]),
        "expand": (lambda t: ops.sum(ops.mul(expand(t[0], mask_config), t[1])),
                   [rng.uniform(0.1, 0.6, size=mask_config.param_shape), rng.normal(size=(6, 6))]),
        "area_loss": (lambda t: area_loss(t[0], AreaTarget(0.25, 12)), [distinct]),
        "planted region": (lambda t: region(t[0]), [image]),
        "planted channels": (lambda t: channels(t[0]), [image]),
        "additive channels": (lambda t: additive(t[0]), [image]),
    }


def gradient_suite(seeds: int = 100) -> SuiteResult:
    cases = 0
    for seed in range(seeds):
        for name, (fn, inputs) in gradient_cases(np.random.default_rng(seed)).items():
            report = check_gradient(fn, inputs)
            cases += 1
            if not report.passed:
                return SuiteResult("gradients", False, cases, f"{name} (seed {seed}): {report.counterexample}")
    return SuiteResult("gradients", True, cases)


def kernel_lipschitz(config: SmoothMaskConfig) -> float:
    """Largest neighbouring-pixel difference of one sampled kernel bump."""
    span = 4 * int(np.ceil(config.sigma)) + 1
    offsets = np.arange(-span, span + 1)
    bump = kernel_profile(np.hypot(offsets[:, None], offsets[None, :]) / config.sigma)
    return float(max(np.abs(np.diff(bump, axis=0)).max(), np.abs(np.diff(bump, axis=1)).max()))


def mask_lipschitz(mask: np.ndarray) -> float:
    return float(max(np.abs(np.diff(mask, axis=0)).max(), np.abs(np.diff(mask, axis=1)).max()))


def max_conv_suite(samples: int = 50, seed: int = 0) -> SuiteResult:
    config = SmoothMaskConfig(temperature=0.05, **LEMMA_GEOMETRY)
    bound = kernel_lipschitz(config)
    rng = np.random.default_rng(seed)
    rows, cols = config.out_h, config.out_w
    s = config.step
    with double_precision():
        for case in range(samples):
            params = rng.uniform(size=config.param_shape)
            params[rng.uniform(size=params.shape) < 0.2] = 1.0
            mask = max_conv(Tensor(params), config).numpy()
            nearest = params[np.arange(rows)[:, None] // s, np.arange(cols)[None, :] // s]
            if np.any(mask < nearest - 1e-12):
                return SuiteResult("max-conv", False, case + 1, f"case {case}: mask below upsampled parameters")
            sites = mask[::s, ::s][params == 1.0]
            if np.any(sites != 1.0):
                return SuiteResult("max-conv", False, case + 1, f"case {case}: a saturated sample is not 1")
            lipschitz = mask_lipschitz(mask)
            if lipschitz > bound + 1e-6:
                return SuiteResult("max-conv", False, case + 1,
                                   f"case {case}: Lipschitz {lipschitz:.6g} exceeds kernel {bound:.6g}")
    return SuiteResult("max-conv", True, samples)


def smax_suite(samples: int = 50, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    config_hot = SmoothMaskConfig(temperature=1e-4, **LEMMA_GEOMETRY)
    with double_precision():
        for case in range(samples):
            window = Tensor(rng.uniform(size=(9, 4)))
            flat = smax(window, 1e6).numpy()
            if np.max(np.abs(flat - window.data.mean(axis=0))) >= 1e-6:
                return SuiteResult("smax", False, case + 1, f"case {case}: T=1e6 is not the mean")
            sharp = smax(window, 1e-4).numpy()
            if np.max(np.abs(sharp - window.data.max(axis=0))) >= 1e-3:
                return SuiteResult("smax", False, case + 1, f"case {case}: T=1e-4 is not the max")
            params = Tensor(rng.uniform(size=config_hot.param_shape))
            gap = np.max(np.abs(expand(params, config_hot).numpy() - max_conv(params, config_hot).numpy()))
            if gap >= 1e-3:
                return SuiteResult("smax", False, case + 1, f"case {case}: expansion differs from max-conv by {gap:.3g}")
    return SuiteResult("smax", True, samples)


SUITES: Dict[str, Callable[[], SuiteResult]] = {
    "gradients": gradient_suite,
    "max-conv": max_conv_suite,
    "smax": smax_suite,
}


def run_selftest(names=None) -> List[SuiteResult]:
    results = []
    for name in names or SUITES:
        result = SUITES[name]()
        logger.info("%s %s (%d cases)", "✅" if result.passed else "❌", name, result.cases)
        results.append(result)
    return results
