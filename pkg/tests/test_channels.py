import numpy as np
import pytest

from analytics.attribution import curve_monotone
from analytics.channels import (ChannelRecord, ChannelSchedule, apply_channel_mask, feature_inversion,
                                find_extremal_channels, masked_activation, optimize_channel_mask,
                                per_class_mask, saliency_overlay, sweep_channels)
from app.errors import InputError
from models.zoo import (Box, Conv2dLayer, LayerModel, LinearLayer, MeanPoolLayer, ReluLayer,
                        additive_channel_model, planted_channel_model, planted_region_model)
from tensor_core import Tensor

PLANTED = [2, 5, 11]


@pytest.fixture(scope="module")
def image():
    return Tensor(np.random.default_rng(7).uniform(0.2, 1.0, size=(3, 16, 16)))


@pytest.fixture(scope="module")
def planted_split():
    return planted_channel_model(PLANTED, n_channels=16).split()


def identity_split(shape=(3, 4, 4)):
    eye = np.eye(shape[0], dtype=np.float32).reshape(shape[0], shape[0], 1, 1)
    layers = [Conv2dLayer(eye), ReluLayer(), MeanPoolLayer(), LinearLayer(np.ones((1, shape[0])))]
    return LayerModel(shape, layers, split_after=1).split()


def test_ramp_reaches_the_maximum_halfway():
    schedule = ChannelSchedule(iterations=300, lambda_max=1500.0)
    assert schedule.lam(0) == 0.0
    assert schedule.lam(75) == pytest.approx(750.0)
    assert schedule.lam(150) == schedule.lam(299) == 1500.0


def test_schedule_validation():
    with pytest.raises(InputError):
        ChannelSchedule(ramp_fraction=0.0)
    with pytest.raises(InputError):
        ChannelSchedule(learning_rate=-1.0)


def test_split_shapes(planted_split, image):
    assert planted_split.channels == 16
    assert planted_split.head(image).shape == (16, 16, 16)
    assert planted_split.forward(image).item() == pytest.approx(
        planted_channel_model(PLANTED, n_channels=16)(image).item(), rel=1e-6)


def test_unsplittable_model_is_rejected():
    with pytest.raises(InputError):
        planted_region_model(Box(0, 0, 2, 2), input_shape=(3, 8, 8)).split()


def test_channel_count_is_checked(planted_split, image):
    with pytest.raises(InputError):
        optimize_channel_mask(planted_split, image, 0)
    with pytest.raises(InputError):
        sweep_channels(planted_split, image, [])
    with pytest.raises(InputError):
        sweep_channels(planted_split, image, [17])


def test_apply_channel_mask_broadcasts_over_space():
    activation = Tensor(np.ones((2, 3, 3)))
    out = apply_channel_mask(Tensor([0.5, 2.0]), activation).data
    np.testing.assert_allclose(out[0], 0.5)
    np.testing.assert_allclose(out[1], 2.0)
    with pytest.raises(InputError):
        apply_channel_mask(Tensor([1.0, 1.0, 1.0]), activation)


def test_saliency_overlay_examples():
    activation = Tensor(np.arange(8.0).reshape(2, 2, 2))
    np.testing.assert_array_equal(saliency_overlay(np.array([1.0, 0.0]), activation).data, [[0, 1], [2, 3]])
    np.testing.assert_array_equal(saliency_overlay(np.array([1.0, 1.0]), activation).data, [[4, 6], [8, 10]])


def test_saliency_overlay_is_linear_in_the_mask(rng):
    activation = Tensor(rng.integers(0, 5, size=(4, 3, 3)).astype(float))
    a, b = rng.integers(0, 3, size=4).astype(float), rng.integers(0, 3, size=4).astype(float)
    combined = saliency_overlay(2 * a + b, activation).data
    np.testing.assert_array_equal(combined, 2 * saliency_overlay(a, activation).data
                                  + saliency_overlay(b, activation).data)


def test_per_class_mask():
    mean, top = per_class_mask([np.array([0.0, 1.0, 0.5]), np.array([1.0, 1.0, 0.5])])
    np.testing.assert_allclose(mean, [0.5, 1.0, 0.5])
    assert top == 1
    assert per_class_mask([np.array([0.3, 0.3])])[1] == 0
    with pytest.raises(InputError):
        per_class_mask([])


def test_selected_breaks_ties_by_index():
    record = ChannelRecord(2, np.array([0.9, 0.2, 0.9, 0.9]), 1.0)
    assert record.selected == [0, 2]


def test_masked_activation_zeroes_dropped_channels(planted_split, image):
    mask = np.zeros(16)
    mask[PLANTED] = 1.0
    kept = masked_activation(planted_split, image, mask)
    assert np.all(kept.data[[0, 1, 3]] == 0)
    assert planted_split.tail(kept).item() == pytest.approx(planted_split.forward(image).item(), rel=1e-5)


@pytest.mark.slow
def test_planted_channels_are_selected(planted_split, image):
    mask, trace = optimize_channel_mask(planted_split, image, 3)
    assert ChannelRecord(3, mask, 0.0).selected == PLANTED
    assert np.all(np.minimum(mask, 1.0 - mask) < 0.05)
    assert len(trace) == 300


@pytest.mark.slow
def test_extremal_channel_count(planted_split, image):
    phi0 = 0.9 * planted_split.forward(image).item()
    assert find_extremal_channels(planted_split, image, [1, 3, 5, 8, 16], phi0) == 3


@pytest.mark.slow
def test_additive_model_curve_is_monotone(image):
    split = additive_channel_model(n_channels=8).split()
    result = sweep_channels(split, image, range(1, 9), threads=2)
    assert curve_monotone([r.score for r in result.records], tolerance=1e-4 * result.full_score)
    assert result.a_star == 8


def test_feature_inversion_follows_a_positive_target(rng):
    split = identity_split()
    target = Tensor(rng.uniform(0.5, 1.5, size=(3, 4, 4)))
    inverted, trace = feature_inversion(split, target, steps=200, lr=0.1)
    cosine = np.sum(inverted * target.data) / (np.linalg.norm(inverted) * np.linalg.norm(target.data))
    assert cosine >= 0.99
    assert np.linalg.norm(inverted) <= 0.5 * np.sqrt(48) + 1e-4
    assert trace[-1] >= trace[0]


def test_feature_inversion_with_zero_target_stays_put():
    split = identity_split()
    inverted, trace = feature_inversion(split, Tensor(np.zeros((3, 4, 4))), steps=20)
    np.testing.assert_allclose(inverted, 0.5)
    assert all(value == 0.0 for value in trace)


def test_feature_inversion_without_steps_returns_the_start():
    inverted, trace = feature_inversion(identity_split(), Tensor(np.ones((3, 4, 4))), steps=0, budget=4.0)
    np.testing.assert_allclose(inverted, 4.0 / np.sqrt(48), rtol=1e-6)
    assert trace == []


def test_feature_inversion_validates_its_arguments():
    split = identity_split()
    with pytest.raises(InputError):
        feature_inversion(split, Tensor(np.ones((2, 4, 4))))
    with pytest.raises(InputError):
        feature_inversion(split, Tensor(np.ones((3, 4, 4))), budget=0.0)
