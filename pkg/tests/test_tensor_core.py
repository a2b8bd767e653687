import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from app.errors import InputError, NumericalError
from app.selftest import gradient_cases, gradient_suite
from tensor_core import Graph, Tensor, double_precision, ops
from tensor_core.gradcheck import check_gradient

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_detached_operations_stay_off_the_tape():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
    out = ops.add(a, b)
    assert not out.attached
    np.testing.assert_allclose(out.data, [4.0, 6.0])


def test_tensors_are_immutable_copies():
    source = np.ones(3)
    t = Tensor(source)
    source[0] = 5.0
    assert t.data[0] == 1.0
    with pytest.raises(ValueError):
        t.data[0] = 2.0


def test_zero_extent_rejected():
    with pytest.raises(InputError):
        Tensor(np.zeros((0, 3)))


def test_non_finite_values_raise_numerical_error():
    with pytest.raises(NumericalError):
        Tensor([1.0, np.nan])


def test_backward_of_sum_of_squares():
    graph = Graph()
    x = graph.leaf([1.0, -2.0, 3.0])
    grads = graph.backward(ops.sum(ops.mul(x, x)))
    np.testing.assert_allclose(grads[x], [2.0, -4.0, 6.0])


def test_backward_needs_scalar_root():
    graph = Graph()
    x = graph.leaf([1.0, 2.0])
    with pytest.raises(InputError):
        graph.backward(ops.scale(x, 2.0))


def test_unreached_leaf_gets_zero_gradient():
    graph = Graph()
    x, y = graph.leaf([1.0, 2.0]), graph.leaf([5.0])
    grads = graph.backward(ops.sum(x))
    np.testing.assert_array_equal(grads[y], [0.0])
    assert not grads.reached(y)


def test_mixed_graphs_rejected():
    a, b = Graph().leaf([1.0]), Graph().leaf([2.0])
    with pytest.raises(InputError):
        ops.add(a, b)


def test_shared_subexpression_accumulates():
    graph = Graph()
    x = graph.leaf([2.0])
    y = ops.mul(x, x)
    grads = graph.backward(ops.sum(ops.add(y, y)))
    np.testing.assert_allclose(grads[x], [8.0])


def test_scalar_broadcast_only():
    assert ops.add(Tensor([1.0, 2.0]), 1.0).shape == (2,)
    assert ops.mul(Tensor(2.0), Tensor([1.0, 2.0])).shape == (2,)
    with pytest.raises(InputError):
        ops.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_division_by_zero_rejected():
    with pytest.raises(InputError):
        ops.div(Tensor([1.0]), Tensor([0.0]))


def test_clamp_rejects_empty_interval():
    with pytest.raises(InputError):
        ops.clamp(Tensor([0.5]), 1.0, 0.0)


def test_take_zero_fills_and_scatters_back():
    graph = Graph()
    x = graph.leaf([1.0, 2.0, 3.0])
    out = ops.take(x, np.array([[2, -1], [2, 0]]))
    np.testing.assert_allclose(out.data, [[3.0, 0.0], [3.0, 1.0]])
    grads = graph.backward(ops.sum(out))
    np.testing.assert_allclose(grads[x], [1.0, 0.0, 2.0])


def test_max_gradient_goes_to_first_maximum():
    graph = Graph()
    x = graph.leaf([1.0, 3.0, 3.0])
    value, index = ops.max(x)
    assert index == 1
    np.testing.assert_allclose(graph.backward(value)[x], [0.0, 1.0, 0.0])


def test_sort_permutation_and_stable_ties():
    ordered, perm = ops.sort_with_permutation(Tensor([0.5, 0.1, 0.5, 0.0]))
    np.testing.assert_allclose(ordered.data, [0.0, 0.1, 0.5, 0.5])
    np.testing.assert_array_equal(perm, [3, 1, 0, 2])


def test_sort_average_ties_shares_the_adjoint():
    graph = Graph()
    x = graph.leaf([1.0, 1.0, 0.0])
    ordered, _ = ops.sort_with_permutation(x, ties="average")
    weights = Tensor([0.0, 0.0, 4.0])
    grads = graph.backward(ops.sum(ops.mul(ordered, weights)))
    np.testing.assert_allclose(grads[x], [2.0, 2.0, 0.0])


def test_conv2d_identity_kernel():
    image = np.arange(12.0).reshape(3, 4)
    kernel = np.zeros((3, 3))
    kernel[1, 1] = 1.0
    np.testing.assert_allclose(ops.conv2d(Tensor(image), Tensor(kernel)).data, image)


def test_conv2d_replicate_padding_on_constant_image():
    out = ops.conv2d(Tensor(np.full((4, 4), 2.0)), Tensor(np.ones((3, 3))), padding="replicate")
    np.testing.assert_allclose(out.data, 18.0)


def test_conv2d_box_filter_on_a_ramp():
    ramp = np.arange(9.0).reshape(3, 3)
    out = ops.conv2d(Tensor(ramp), Tensor(np.full((3, 3), 1.0 / 9.0))).data
    assert out[1, 1] == pytest.approx(ramp.mean())
    # zero padding loses the missing neighbours at the corner
    assert out[0, 0] == pytest.approx((0 + 1 + 3 + 4) / 9.0)


@pytest.mark.parametrize("kernel", [np.full((3, 3), 1.0 / 9.0),
                                    np.outer([0.25, 0.5, 0.25], [0.25, 0.5, 0.25])])
def test_conv2d_replicate_keeps_the_mean(rng, kernel):
    image = rng.uniform(size=(2, 6, 7))
    with double_precision():
        out = ops.conv2d(Tensor(image), Tensor(kernel), padding="replicate").data
    np.testing.assert_allclose(out.mean(axis=(1, 2)), image.mean(axis=(1, 2)), rtol=1e-12)


def test_channel_mixing_replicate_conv_gradient(rng):
    x = rng.normal(size=(2, 5, 5))
    report = check_gradient(lambda t: ops.sum(ops.mul(ops.conv2d(t[0], t[1], "replicate"), t[2])),
                            [x, rng.normal(size=(4, 2, 3, 3)), rng.normal(size=(4, 5, 5))])
    assert report.passed, report.counterexample


def test_conv2d_rejects_oversized_kernel():
    with pytest.raises(InputError):
        ops.conv2d(Tensor(np.ones((2, 2))), Tensor(np.ones((5, 5))))


def test_reductions_accumulate_in_double():
    values = np.full(10000, 0.1, dtype=np.float32)
    assert ops.sum(Tensor(values)).item() == pytest.approx(1000.0, rel=1e-6)


def test_double_precision_scope():
    assert Tensor([1.0]).data.dtype == np.float32
    with double_precision():
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite))
def test_elementwise_gradients_match_finite_differences(a, b):
    report = check_gradient(lambda t: ops.sum(ops.mul(ops.exp(ops.scale(t[0], 0.3)), ops.add(t[1], 1.0))), [a, b])
    assert report.passed, report.counterexample


@pytest.mark.parametrize("seed", range(10))
def test_every_op_and_model_passes_gradient_check(seed):
    for name, (fn, inputs) in gradient_cases(np.random.default_rng(seed)).items():
        report = check_gradient(fn, inputs)
        assert report.passed, f"{name}: {report.counterexample}"


def test_gradcheck_reports_a_wrong_adjoint():
    def broken(t):
        # sum of squares with the factor 2 missing from its adjoint
        x = t[0]
        value = np.asarray(np.sum(x.data ** 2))
        if not x.attached:
            return Tensor(value)
        return x.graph.record("bad", value, (x,), lambda g: (g * x.data,))

    report = check_gradient(broken, [np.array([1.0, 2.0])])
    assert not report.passed
    assert report.counterexample


def test_selftest_gradient_cases_have_matching_shapes():
    result = gradient_suite(seeds=2)
    assert result.passed, result.counterexample
    assert result.cases == 2 * len(gradient_cases(np.random.default_rng(0)))


@pytest.mark.slow
def test_gradient_suite_over_a_hundred_seeds():
    result = gradient_suite(seeds=100)
    assert result.passed, result.counterexample
