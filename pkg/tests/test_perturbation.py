import numpy as np
import pytest

from app.errors import InputError
from perturbation.operators import blur_radius, fade_to_black, gaussian_blur, gaussian_kernel
from perturbation.pyramid import BLUR, FADE, apply_mask, build_pyramid, default_sigma_max
from tensor_core import Tensor


@pytest.fixture
def image(rng):
    return Tensor(rng.uniform(0.1, 1.0, size=(3, 16, 16)))


def test_blur_of_constant_image_is_constant():
    out = gaussian_blur(Tensor(np.full((2, 9, 9), 0.7)), 2.0)
    np.testing.assert_allclose(out.data, 0.7, atol=1e-6)


def test_blur_with_zero_sigma_is_identity(image):
    assert gaussian_blur(image, 0.0) is image


def test_blur_rejects_negative_sigma(image):
    with pytest.raises(InputError):
        gaussian_blur(image, -1.0)


def test_blur_preserves_range_and_smooths(image):
    out = gaussian_blur(image, 2.0).data
    assert out.min() >= image.data.min() - 1e-6
    assert out.max() <= image.data.max() + 1e-6
    assert out.std() < image.data.std()


def test_kernel_and_radius():
    kernel = gaussian_kernel(1.0, 3)
    assert kernel.shape == (7, 7)
    assert kernel[3, 3] == 1.0
    assert blur_radius(5.0, 8, 8) == 7


def test_fade_scales_towards_black(image):
    np.testing.assert_allclose(fade_to_black(image, 0.25).data, 0.75 * image.data, rtol=1e-6)
    np.testing.assert_allclose(fade_to_black(image, 1.0).data, 0.0)
    with pytest.raises(InputError):
        fade_to_black(image, 1.5)


def test_default_sigma_max():
    assert default_sigma_max(FADE, 64, 64) == 1.0
    assert default_sigma_max(BLUR, 64, 64) == pytest.approx(5.76)
    assert default_sigma_max(BLUR, 16, 16) == 2.0


def test_pyramid_levels_follow_the_schedule(image):
    pyramid = build_pyramid(image, sigma_max=1.0, levels=4, kind=FADE)
    assert pyramid.levels.shape == (5, 3, 16, 16)
    for level in range(5):
        np.testing.assert_allclose(pyramid.levels[level], (1 - level / 4) * image.data, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("kwargs", [dict(levels=0), dict(kind="noise"), dict(sigma_max=-1.0),
                                    dict(kind=FADE, sigma_max=2.0)])
def test_pyramid_rejects_bad_settings(image, kwargs):
    with pytest.raises(InputError):
        build_pyramid(image, **kwargs)


def test_mask_of_ones_returns_the_image(image):
    pyramid = build_pyramid(image, levels=8)
    out = apply_mask(pyramid, Tensor(np.ones((16, 16))))
    np.testing.assert_allclose(out.data, image.data, atol=1e-6)


def test_mask_of_zeros_returns_the_most_perturbed_level(image):
    pyramid = build_pyramid(image, levels=8)
    out = apply_mask(pyramid, Tensor(np.zeros((16, 16))))
    np.testing.assert_allclose(out.data, pyramid.levels[-1], atol=1e-6)


def test_half_mask_interpolates_between_levels(image):
    pyramid = build_pyramid(image, sigma_max=1.0, levels=1, kind=FADE)
    out = apply_mask(pyramid, Tensor(np.full((16, 16), 0.5)))
    np.testing.assert_allclose(out.data, 0.5 * image.data, rtol=1e-5)


def test_apply_mask_is_monotone_in_the_mask_for_fade(image):
    pyramid = build_pyramid(image, kind=FADE)
    low = apply_mask(pyramid, Tensor(np.full((16, 16), 0.3))).data
    high = apply_mask(pyramid, Tensor(np.full((16, 16), 0.6))).data
    assert np.all(high >= low)


def test_apply_mask_validates_mask(image):
    pyramid = build_pyramid(image)
    with pytest.raises(InputError):
        apply_mask(pyramid, Tensor(np.ones((8, 8))))
    with pytest.raises(InputError):
        apply_mask(pyramid, Tensor(np.full((16, 16), 1.5)))


def test_blur_of_a_centred_impulse():
    impulse = np.zeros((7, 7))
    impulse[3, 3] = 1.0
    out = gaussian_blur(Tensor(impulse), 1.0).data
    assert out[3, 3] == pytest.approx(1.0 / gaussian_kernel(1.0, 3).sum(), rel=1e-5)


def laplacian_energy(level):
    inner = level[:, 1:-1, 1:-1]
    laplacian = (level[:, :-2, 1:-1] + level[:, 2:, 1:-1] + level[:, 1:-1, :-2] + level[:, 1:-1, 2:]
                 - 4 * inner)
    return float(np.mean(laplacian ** 2))


def test_blur_levels_lose_detail_level_by_level(rng):
    pyramid = build_pyramid(Tensor(rng.uniform(size=(3, 32, 32))), levels=8, kind=BLUR)
    energies = [laplacian_energy(level) for level in pyramid.levels]
    assert all(later <= earlier for earlier, later in zip(energies, energies[1:]))
    assert energies[-1] < 0.1 * energies[0]


@pytest.mark.parametrize("kind", [BLUR, FADE])
def test_perturbed_pixels_stay_inside_the_level_hull(image, rng, kind):
    pyramid = build_pyramid(image, levels=8, kind=kind)
    out = apply_mask(pyramid, Tensor(rng.uniform(size=(16, 16)))).data
    assert np.all(out >= pyramid.levels.min(axis=0) - 1e-6)
    assert np.all(out <= pyramid.levels.max(axis=0) + 1e-6)
