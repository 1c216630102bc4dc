import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dssdn import functional as F
from dssdn.errors import ConfigurationError, DimensionError, UsageError, ValidationError
from dssdn.gradcheck import check_gradients
from dssdn.tensor import Tensor, backward, matmul, no_grad, relu, sigmoid, sum_all

from oracles import MacCounter, direct_conv2d, fast_direct_conv2d


def rand(rng, *shape):
    return rng.standard_normal(shape)


class TestConv2d:
    def test_zero_input_gives_zero_output(self):
        rng = np.random.default_rng(0)
        out = F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(rand(rng, 3, 2, 3, 3)), Tensor(np.zeros(3)), padding=1)
        assert np.all(out.data == 0.0)

    def test_identity_pointwise(self):
        x = np.random.default_rng(1).standard_normal((2, 4, 5, 3))
        w = np.eye(4).reshape(4, 4, 1, 1)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x)

    def test_depthwise_3x1_matches_sextuple_loop(self):
        rng = np.random.default_rng(2)
        x, w = rand(rng, 1, 3, 5, 6), rand(rng, 3, 1, 3, 1)
        out = F.conv2d(Tensor(x), Tensor(w), padding=(1, 0), groups=3)
        ref = direct_conv2d(x, w, padding=(1, 0), groups=3)
        assert out.shape == (1, 3, 5, 6)
        np.testing.assert_allclose(out.data, ref, atol=1e-6, rtol=0)

    @pytest.mark.parametrize("stride,padding,groups,kernel", [
        (1, 0, 1, (3, 3)), (2, 1, 1, (3, 3)), (1, (0, 1), 4, (1, 3)), ((2, 1), (1, 0), 2, (3, 1)), (1, 0, 1, (1, 1)),
    ])
    def test_matches_direct_loop(self, stride, padding, groups, kernel):
        rng = np.random.default_rng(3)
        x = rand(rng, 2, 4, 7, 6)
        w = rand(rng, 6 if groups != 4 else 4, 4 // groups, *kernel)
        b = rand(rng, w.shape[0])
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding, groups)
        ref = direct_conv2d(x, w, b, F._pair(stride), F._pair(padding), groups)
        np.testing.assert_allclose(out.data, ref, atol=1e-10)

    def test_output_size_law(self):
        assert F.conv_output_size(9, 3, 1, 2) == 5
        assert F.conv_output_size(5, 3, 0, 1) == 3

    def test_groups_not_dividing_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            F.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 1, 1, 1))), groups=2)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(DimensionError, match="channel"):
            F.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 1, 1))))

    def test_kernel_too_large_names_axis(self):
        with pytest.raises(DimensionError, match="time|freq"):
            F.conv2d(Tensor(np.zeros((1, 1, 2, 4))), Tensor(np.zeros((1, 1, 3, 1))))

    def test_mac_counter_of_oracle(self):
        c = MacCounter()
        direct_conv2d(np.ones((1, 4, 2, 2)), np.ones((8, 4, 1, 1)), counter=c)
        assert c.macs == 128

    @settings(max_examples=25, deadline=None)
    @given(b=st.integers(1, 2), cin=st.integers(1, 4), cout=st.integers(1, 4), h=st.integers(3, 7),
           w=st.integers(3, 7), kh=st.sampled_from([1, 3]), kw=st.sampled_from([1, 3]), seed=st.integers(0, 10**6))
    def test_property_matches_oracle(self, b, cin, cout, h, w, kh, kw, seed):
        rng = np.random.default_rng(seed)
        x, wt, bias = rand(rng, b, cin, h, w), rand(rng, cout, cin, kh, kw), rand(rng, cout)
        out = F.conv2d(Tensor(x), Tensor(wt), Tensor(bias), 1, (kh // 2, kw // 2))
        np.testing.assert_allclose(out.data, fast_direct_conv2d(x, wt, bias, padding=(kh // 2, kw // 2)), atol=1e-9)


class TestSplitConcat:
    def test_split_frequency_shapes(self):
        lo, hi = F.split_frequency(Tensor(np.zeros((1, 4, 8, 256))), 128)
        assert lo.shape == hi.shape == (1, 4, 8, 128)

    @pytest.mark.parametrize("axis_fn", ["frequency", "channels"])
    def test_round_trip(self, axis_fn):
        x = np.random.default_rng(0).standard_normal((2, 6, 3, 7))
        if axis_fn == "frequency":
            a, b = F.split_frequency(Tensor(x), 3)
            y = F.concat_frequency(a, b)
        else:
            a, b = F.split_channels(Tensor(x), 2)
            y = F.concat_channels(a, b)
        np.testing.assert_array_equal(y.data, x)

    def test_concat_gradient_is_ones(self):
        a = Tensor(np.random.default_rng(0).standard_normal((1, 2, 3, 3)), requires_grad=True)
        b = Tensor(np.zeros((1, 5, 3, 3)), requires_grad=True)
        backward(sum_all(F.concat_channels(a, b)))
        np.testing.assert_array_equal(a.grad, np.ones_like(a.data))
        np.testing.assert_array_equal(b.grad, np.ones_like(b.data))

    def test_split_gradient_routes_to_slices(self):
        x = Tensor(np.zeros((1, 1, 2, 5)), requires_grad=True)
        lo, hi = F.split_frequency(x, 2)
        backward(sum_all(lo) + sum_all(hi * 3.0))
        np.testing.assert_array_equal(x.grad[0, 0], [[1, 1, 3, 3, 3]] * 2)

    def test_split_point_must_be_interior(self):
        with pytest.raises(DimensionError):
            F.split_frequency(Tensor(np.zeros((1, 1, 2, 4))), 0)
        with pytest.raises(DimensionError):
            F.split_frequency(Tensor(np.zeros((1, 1, 2, 4))), 4)

    def test_concat_mismatch(self):
        with pytest.raises(DimensionError):
            F.concat_channels(Tensor(np.zeros((1, 1, 2, 4))), Tensor(np.zeros((1, 1, 3, 4))))

    def test_add_requires_same_shape_feature_maps(self):
        with pytest.raises(DimensionError):
            F.add_maps(Tensor(np.zeros((1, 2, 3, 4))), Tensor(np.zeros((1, 2, 3, 5))))


class TestActivationsAndLoss:
    def test_sigmoid_zero(self):
        assert sigmoid(Tensor(np.zeros(1))).item() == 0.5

    def test_sigmoid_stable_at_extremes(self):
        out = sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_relu_gradient(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        backward(sum_all(relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_uniform_logits_give_ln10(self):
        loss = F.softmax_cross_entropy(Tensor(np.zeros((3, 10))), F.one_hot([1, 4, 9], 10))
        assert loss.item() == pytest.approx(math.log(10), abs=1e-12)
        assert loss.item() == pytest.approx(2.302585, abs=1e-6)

    def test_large_margin_loss_vanishes(self):
        logits = np.zeros((1, 10))
        logits[0, 3] = 20.0
        assert F.softmax_cross_entropy(Tensor(logits), F.one_hot([3], 10)).item() < 1e-3

    def test_bad_target_rows(self):
        with pytest.raises(ValidationError):
            F.softmax_cross_entropy(Tensor(np.zeros((1, 3))), np.array([[0.5, 0.2, 0.2]]))

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(5)
        logits = Tensor(rng.standard_normal((4, 10)), requires_grad=True)
        targets = rng.dirichlet(np.ones(10), size=4)
        res = check_gradients(lambda: F.softmax_cross_entropy(logits, targets), [logits])
        assert res.passed, res

    def test_global_avg_pool_shape_and_value(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
        out = F.global_avg_pool(Tensor(x))
        assert out.shape == (2, 3)
        np.testing.assert_allclose(out.data, x.mean(axis=(2, 3)))

    def test_linear_matches_matmul(self):
        rng = np.random.default_rng(0)
        x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)
        np.testing.assert_allclose(F.linear(Tensor(x), Tensor(w), Tensor(b)).data, x @ w.T + b)


class TestBackward:
    def test_linear_case_grad_equals_input(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        w = Tensor(np.ones((3, 4)), requires_grad=True)
        backward(sum_all(w * Tensor(x)))
        np.testing.assert_array_equal(w.grad, x)

    def test_non_scalar_loss_is_usage_error(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            backward(w * 2.0)

    def test_backward_twice_is_usage_error(self):
        w = Tensor(np.ones(3), requires_grad=True)
        loss = sum_all(w * w)
        backward(loss)
        with pytest.raises(UsageError):
            backward(loss)

    def test_reusing_consumed_intermediate_is_usage_error(self):
        w = Tensor(np.ones(3), requires_grad=True)
        h = w * 2.0
        backward(sum_all(h))
        with pytest.raises(UsageError):
            sum_all(h)

    def test_shared_subexpression_accumulates(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        h = w * w
        backward(sum_all(h + h))
        np.testing.assert_allclose(w.grad, [12.0])

    def test_matmul_gradient(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        res = check_gradients(lambda: sum_all(matmul(a, b) * matmul(a, b)), [a, b])
        assert res.passed

    def test_no_grad_builds_no_graph(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            y = sum_all(w * 3.0)
        assert not y.requires_grad

    def test_sc_layer_finite_differences_h1e3(self):
        from dssdn.operators import SeparableConv

        rng = np.random.default_rng(11)
        layer = SeparableConv(2, 3, rng)
        x = Tensor(rng.standard_normal((1, 2, 4, 5)))
        proj = rng.standard_normal((1, 3, 4, 5))
        res = check_gradients(lambda: sum_all(layer(x) * proj), layer.parameters(), h=1e-3)
        assert res.passed, res.max_rel_error

    def test_outputs_stay_finite(self):
        from dssdn.tensor import tensors_finite

        x = Tensor(np.random.default_rng(0).uniform(-25, 5, (1, 2, 3, 3)))
        assert tensors_finite([sigmoid(x), relu(x), F.global_avg_pool(x)])

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        x, w = rand(rng, 2, 3, 6, 6), rand(rng, 5, 3, 3, 3)
        a = F.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = F.conv2d(Tensor(x), Tensor(w), padding=1).data
        np.testing.assert_array_equal(a, b)
