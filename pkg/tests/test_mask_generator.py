import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from app.errors import InputError
from app.selftest import LEMMA_GEOMETRY, kernel_lipschitz, mask_lipschitz, max_conv_suite, smax_suite
from masks.generator import (MaskParams, SmoothMaskConfig, derive_geometry, expand, kernel_profile,
                             max_conv, pool_weights, smax, smax_pool, unpool, upsample)
from perturbation.operators import gaussian_kernel
from tensor_core import Graph, Tensor, double_precision, ops

unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.fixture
def desk():
    return SmoothMaskConfig(sigma=1.0, step=1, temperature=0.05, out_h=64, out_w=64)


@pytest.fixture
def lemma():
    return SmoothMaskConfig(temperature=0.05, **LEMMA_GEOMETRY)


def test_desk_geometry(desk):
    rows = derive_geometry(desk).rows
    assert (rows.samples, rows.padding, rows.radius, rows.window, rows.pooled, rows.upsampled) == \
        (64, 2, 2, 5, 64, 64)


def test_coarse_geometry(lemma):
    rows = derive_geometry(lemma).rows
    assert (rows.samples, rows.padding, rows.radius, rows.window, rows.pooled, rows.upsampled) == \
        (4, 3, 3, 7, 4, 16)
    assert lemma.param_shape == (4, 4)


def test_224px_geometry():
    rows = derive_geometry(SmoothMaskConfig(sigma=21.0, step=7, out_h=224, out_w=224)).rows
    assert rows.samples == 32
    assert rows.upsampled >= 224


@pytest.mark.parametrize("kwargs", [dict(sigma=0.0, step=1), dict(sigma=1.0, step=0),
                                    dict(sigma=1.0, step=1, margin=-1), dict(sigma=1.0, step=1, temperature=0.0)])
def test_config_rejects_invalid_values(kwargs):
    with pytest.raises(InputError):
        SmoothMaskConfig(out_h=8, out_w=8, **kwargs)


def test_kernel_profile_is_flat_then_decays():
    np.testing.assert_allclose(kernel_profile([0.0, 0.5, 1.0]), 1.0)
    assert kernel_profile(3.0) == pytest.approx(np.exp(-1.0))
    assert kernel_profile(2.0) > kernel_profile(3.0) > 0
    with pytest.raises(InputError):
        kernel_profile(-0.1)


@pytest.mark.parametrize("config", [SmoothMaskConfig(sigma=1.0, step=1, out_h=12, out_w=12),
                                    SmoothMaskConfig(**LEMMA_GEOMETRY)])
def test_pool_weights_reach_one_at_every_pixel(config):
    weights = pool_weights(config).weights
    window = derive_geometry(config).window
    assert weights.shape[0] == window * window
    assert np.all(weights > 0) and np.all(weights <= 1)
    np.testing.assert_array_equal(weights.max(axis=0), 1.0)


def test_unpool_repeats_the_own_sample_off_the_lattice():
    config = SmoothMaskConfig(sigma=1.0, step=1, out_h=3, out_w=3)
    params = np.arange(9.0).reshape(3, 3)
    spread = unpool(Tensor(params), config).data
    geometry = derive_geometry(config)
    assert spread.shape == (geometry.window ** 2, geometry.rows.pooled, geometry.cols.pooled)
    np.testing.assert_array_equal(spread[(geometry.window ** 2) // 2], params)
    # slot (0, 0) looks two samples up and left: only (2, 2) reaches a real sample
    np.testing.assert_array_equal(spread[0], [[0, 1, 2], [3, 4, 5], [6, 7, 0]])


def test_unpool_zero_border_reads_zero_off_the_lattice():
    config = SmoothMaskConfig(sigma=1.0, step=1, out_h=3, out_w=3, border="zero")
    spread = unpool(Tensor(np.ones((3, 3))), config).data
    np.testing.assert_array_equal(spread[(derive_geometry(config).window ** 2) // 2], 1.0)
    np.testing.assert_array_equal(spread[0], [[0, 0, 0], [0, 0, 0], [0, 0, 1]])


def test_unknown_border_is_rejected():
    with pytest.raises(InputError):
        SmoothMaskConfig(sigma=1.0, step=1, out_h=8, out_w=8, border="wrap")


@pytest.mark.parametrize("value", [1.0, 0.7, 0.25])
def test_uniform_parameters_expand_to_a_uniform_mask(desk, value):
    mask = expand(MaskParams.full(desk, value).tensor(), desk).data
    assert np.ptp(mask) == 0.0


def test_zero_border_lifts_the_frame_above_the_interior():
    zero = SmoothMaskConfig(sigma=1.0, step=1, temperature=0.05, out_h=64, out_w=64, border="zero")
    mask = expand(MaskParams.full(zero).tensor(), zero).data
    assert mask[0, 0] > mask[0, 32] > mask[32, 32]


def test_uniform_parameters_share_the_area_gradient_evenly(desk):
    with double_precision():
        graph = Graph()
        params = graph.leaf(np.full(desk.param_shape, 0.8))
        grads = graph.backward(ops.sum(expand(params, desk)))[params]
    np.testing.assert_allclose(grads, grads[32, 32], rtol=1e-9)


def test_upsample_is_nearest_neighbour():
    config = SmoothMaskConfig(sigma=2.0, step=2, out_h=4, out_w=4)
    values = Tensor(np.arange(4.0).reshape(1, 2, 2))
    np.testing.assert_array_equal(upsample(values, config).data[0],
                                  [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])


def test_parameter_shape_is_checked(desk):
    with pytest.raises(InputError):
        expand(Tensor(np.ones((8, 8))), desk)


def test_mask_params_validate_range(desk):
    assert MaskParams.full(desk).values.shape == (64, 64)
    with pytest.raises(InputError):
        MaskParams(np.full((2, 2), 1.5))


def test_expand_stays_in_unit_range(desk, rng):
    mask = expand(Tensor(rng.uniform(size=desk.param_shape)), desk).data
    assert mask.shape == (64, 64)
    assert mask.min() >= 0 and mask.max() <= 1


def test_all_ones_parameters_in_the_hard_limit(desk):
    hard = SmoothMaskConfig(sigma=1.0, step=1, temperature=1e-3, out_h=64, out_w=64)
    mask = expand(MaskParams.full(hard).tensor(), hard).data
    np.testing.assert_allclose(mask, 1.0, atol=1e-4)
    assert expand(MaskParams.full(desk).tensor(), desk).data.min() >= 0.95


def test_all_zero_parameters_give_an_empty_mask(desk):
    assert expand(Tensor(np.zeros(desk.param_shape)), desk).data.max() == 0.0


def test_smax_pool_is_uncropped():
    config = SmoothMaskConfig(sigma=1.0, step=1, margin=2, out_h=8, out_w=8)
    geometry = derive_geometry(config)
    assert smax_pool(Tensor(np.ones(config.param_shape)), config).shape == \
        (geometry.rows.upsampled, geometry.cols.upsampled)
    assert expand(Tensor(np.ones(config.param_shape)), config).shape == (8, 8)


def test_smooth_expansion_has_dense_gradients(desk, rng):
    graph = Graph()
    params = graph.leaf(rng.uniform(0.2, 0.8, size=desk.param_shape))
    grads = graph.backward(ops.sum(expand(params, desk)))
    assert np.count_nonzero(grads[params]) == params.size


def test_lemma_suite_passes():
    result = max_conv_suite()
    assert result.passed, result.counterexample


def test_smax_limit_suite_passes():
    result = smax_suite()
    assert result.passed, result.counterexample


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 4), elements=unit))
def test_max_conv_dominates_nearest_upsampling(params):
    config = SmoothMaskConfig(**LEMMA_GEOMETRY)
    with double_precision():
        mask = max_conv(Tensor(params), config).numpy()
    nearest = np.kron(params, np.ones((4, 4)))
    assert np.all(mask >= nearest - 1e-12)
    assert mask_lipschitz(mask) <= kernel_lipschitz(config) + 1e-6


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 4), elements=unit), st.integers(0, 3), st.integers(0, 3))
def test_saturated_samples_stay_saturated(params, i, j):
    params = params.copy()
    params[i, j] = 1.0
    config = SmoothMaskConfig(**LEMMA_GEOMETRY)
    with double_precision():
        mask = max_conv(Tensor(params), config).numpy()
    assert mask[4 * i, 4 * j] == 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=unit))
def test_smax_temperature_limits(values):
    with double_precision():
        window = Tensor(values)
        assert np.max(np.abs(smax(window, 1e6).numpy() - values.mean(axis=0))) < 1e-6
        assert np.max(np.abs(smax(window, 1e-4).numpy() - values.max(axis=0))) < 1e-3


def test_smax_rejects_non_positive_temperature():
    with pytest.raises(InputError):
        smax(Tensor(np.ones((2, 2))), 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 3), elements=unit), st.floats(0.01, 10.0), st.floats(0.01, 10.0))
def test_smax_sits_between_mean_and_max_and_cools_towards_the_max(values, t1, t2):
    cold, hot = sorted((t1, t2))
    with double_precision():
        sharp = smax(Tensor(values), cold).numpy()
        soft = smax(Tensor(values), hot).numpy()
    assert np.all(soft >= values.mean(axis=0) - 1e-9)
    assert np.all(sharp <= values.max(axis=0) + 1e-9)
    assert np.all(sharp >= soft - 1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 4), elements=unit), st.integers(0, 3), st.integers(0, 3), st.floats(0.0, 1.0))
def test_raising_a_parameter_never_lowers_the_max_conv_mask(params, i, j, delta):
    config = SmoothMaskConfig(**LEMMA_GEOMETRY)
    raised = params.copy()
    raised[i, j] = min(1.0, raised[i, j] + delta)
    with double_precision():
        before = max_conv(Tensor(params), config).numpy()
        after = max_conv(Tensor(raised), config).numpy()
    assert np.all(after >= before - 1e-12)


def test_smax_expansion_is_monotone_only_in_the_cold_limit():
    def pixel(temperature, neighbour):
        config = SmoothMaskConfig(sigma=1.0, step=1, temperature=temperature, out_h=8, out_w=8)
        params = np.zeros((8, 8))
        params[4, 4] = 1.0
        params[4, 6] = neighbour
        with double_precision():
            return expand(Tensor(params), config).numpy()[2, 6]

    # a weak neighbour joins the softmax and pulls the weighted mean down
    assert pixel(0.05, 0.0) - pixel(0.05, 0.3) > 1e-3
    assert pixel(1e-3, 0.3) >= pixel(1e-3, 0.0) - 1e-12


def test_single_saturated_sample_draws_the_kernel_footprint():
    config = SmoothMaskConfig(sigma=2.0, step=1, out_h=16, out_w=16)
    params = np.zeros(config.param_shape)
    params[8, 8] = 1.0
    with double_precision():
        mask = max_conv(Tensor(params), config).numpy()
    offsets = np.arange(-3, 4)
    footprint = kernel_profile(np.hypot(offsets[:, None], offsets[None, :]) / 2.0)
    expected = np.zeros((16, 16))
    expected[5:12, 5:12] = footprint
    np.testing.assert_allclose(mask, expected, rtol=1e-12, atol=0)
    np.testing.assert_array_equal(mask[6:11, 8], 1.0)


def gaussian_generator(params, sigma):
    """Plain normalised Gaussian convolution of the parameters, kept only for comparison."""
    kernel = gaussian_kernel(sigma, int(np.ceil(3 * sigma)))
    return ops.conv2d(Tensor(params), Tensor(kernel / kernel.sum())).numpy()


def test_gaussian_generator_dampens_saturated_parameters():
    config = SmoothMaskConfig(sigma=2.0, step=1, out_h=16, out_w=16)
    params = np.zeros(config.param_shape)
    params[8, 8] = 1.0
    assert gaussian_generator(params, 2.0)[8, 8] < 0.1
    with double_precision():
        assert max_conv(Tensor(params), config).numpy()[8, 8] == 1.0
