import numpy as np
import pytest

from fgdistill.errors import DimensionError, GraphError, ParameterError
from fgdistill.tensor import (
    Parameter,
    Tensor,
    absolute,
    add,
    avg_pool2,
    conv1x1,
    elementwise,
    layer_norm,
    mul,
    reduce,
    relu,
    reshape,
    softmax_t,
    square,
    sub,
    tensor_mean,
    tensor_sum,
)


class TestElementwise:
    def test_square(self):
        out = square(Tensor([1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [1.0, 4.0, 9.0])

    def test_sub_self_is_zero(self):
        x = Tensor([0.3, -1.7, 2.2])
        np.testing.assert_array_equal(sub(x, x).data, [0.0, 0.0, 0.0])

    def test_abs_symmetry(self):
        out = absolute(Tensor([-0.5, 0.5]))
        np.testing.assert_array_equal(out.data, [0.5, 0.5])

    def test_scalar_operand(self):
        out = add(Tensor([1.0, 2.0]), 3.0)
        np.testing.assert_array_equal(out.data, [4.0, 5.0])

    def test_dispatch_table(self):
        a, b = Tensor([2.0]), Tensor([5.0])
        assert elementwise("add", a, b).data[0] == 7.0
        assert elementwise("sub", a, b).data[0] == -3.0
        assert elementwise("mul", a, b).data[0] == 10.0
        assert elementwise("square", a).data[0] == 4.0
        assert elementwise("abs", Tensor([-2.0])).data[0] == 2.0
        with pytest.raises(ParameterError):
            elementwise("pow", a, b)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_operators(self):
        x = Tensor([1.0, 2.0])
        np.testing.assert_array_equal((x + 1.0).data, [2.0, 3.0])
        np.testing.assert_array_equal((2.0 * x).data, [2.0, 4.0])
        np.testing.assert_array_equal((-x).data, [-1.0, -2.0])
        np.testing.assert_array_equal((1.0 - x).data, [0.0, -1.0])


class TestReduce:
    def test_mean_over_channel_axis(self):
        t = Tensor(np.array([4.0, 2.0]).reshape(1, 2, 1, 1))
        out = reduce("mean", t, axes=1)
        np.testing.assert_array_equal(out.data, [[[3.0]]])

    def test_sum_all_ones(self):
        assert reduce("sum", Tensor(np.ones((2, 3)))).item() == 6.0

    def test_mean_of_constant(self):
        assert tensor_mean(Tensor(np.full((3, 4), 2.5))).item() == 2.5

    def test_invalid_axis(self):
        with pytest.raises(DimensionError):
            tensor_sum(Tensor(np.ones((2, 2))), axes=5)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            reduce("max", Tensor([1.0]))


class TestSoftmaxT:
    def test_constant_is_uniform(self):
        out = softmax_t(Tensor(np.full(5, 3.3)), axis=0, temperature=0.7)
        np.testing.assert_allclose(out.data, 0.2, atol=1e-15)

    def test_direct_evaluation(self):
        out = softmax_t(Tensor([0.0, np.log(3.0)]), axis=0, temperature=1.0)
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_high_temperature_limit(self):
        out = softmax_t(Tensor([0.0, 1.0]), axis=0, temperature=1e6)
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-5)

    def test_bad_temperature(self):
        with pytest.raises(ParameterError):
            softmax_t(Tensor([1.0]), axis=0, temperature=0.0)
        with pytest.raises(ParameterError):
            softmax_t(Tensor([1.0]), axis=0, temperature=-1.0)

    @pytest.mark.parametrize("temperature", [1e-3, 0.5, 1.0, 1e6])
    def test_sums_to_one_and_finite(self, temperature):
        rng = np.random.default_rng(11)
        x = Tensor(rng.uniform(-1e6, 1e6, size=(4, 9)))
        out = softmax_t(x, axis=1, temperature=temperature)
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-10)


class TestConv1x1:
    def test_identity_weight(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 2, 2)))
        out = conv1x1(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_weight(self):
        x = Tensor(np.ones((1, 3, 2, 2)))
        out = conv1x1(x, Tensor(np.zeros((4, 3))), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4, 2, 2)))

    def test_hand_dot_product(self):
        x = Tensor(np.array([3.0, 4.0]).reshape(1, 2, 1, 1))
        out = conv1x1(x, Tensor([[1.0, 1.0]]))
        assert out.item() == 7.0

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv1x1(Tensor(np.ones((1, 3, 2, 2))), Tensor(np.ones((4, 5))))

    def test_linearity(self):
        rng = np.random.default_rng(5)
        w = Tensor(rng.normal(size=(4, 3)))
        x, y = Tensor(rng.normal(size=(3, 5, 5))), Tensor(rng.normal(size=(3, 5, 5)))
        a, b = 1.3, -0.7
        combined = conv1x1(add(mul(x, a), mul(y, b)), w)
        separate = add(mul(conv1x1(x, w), a), mul(conv1x1(y, w), b))
        np.testing.assert_allclose(combined.data, separate.data, atol=1e-10)


class TestLayerNorm:
    def test_constant_input_gives_zeros(self):
        out = layer_norm(
            Tensor([5.0, 5.0, 5.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)), axes=0
        )
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])

    def test_unit_variance_preserved(self):
        out = layer_norm(
            Tensor([-1.0, 1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), axes=0
        )
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-5)

    def test_gamma_zero_beta_five(self):
        out = layer_norm(
            Tensor([1.0, 2.0, 4.0]), Tensor(np.zeros(3)), Tensor(np.full(3, 5.0)), axes=0
        )
        np.testing.assert_array_equal(out.data, [5.0, 5.0, 5.0])

    def test_bad_gamma_shape(self):
        with pytest.raises(DimensionError):
            layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(2)), Tensor(np.ones(2)), axes=1)


class TestRelu:
    def test_basic(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        np.testing.assert_array_equal(relu(Tensor([-3.0, -0.1])).data, [0.0, 0.0])

    def test_nonnegative_unchanged(self):
        x = Tensor([0.5, 1.5, 0.0])
        np.testing.assert_array_equal(relu(x).data, x.data)

    def test_subgradient_zero_at_zero(self):
        x = Tensor([0.0, 1.0], requires_grad=True)
        tensor_sum(relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        tensor_sum(square(x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_independent_parameter_has_no_grad(self):
        x = Tensor([1.0], requires_grad=True)
        p = Parameter([3.0], "unused")
        tensor_sum(square(x)).backward()
        assert p.grad is None

    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        tensor_sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            square(x).backward()

    def test_grad_accumulates_through_shared_node(self):
        x = Tensor([2.0], requires_grad=True)
        y = add(square(x), square(x))
        tensor_sum(y).backward()
        np.testing.assert_array_equal(x.grad, [8.0])

    def test_constant_graph_records_nothing(self):
        out = square(add(Tensor([1.0]), Tensor([2.0])))
        assert out._backward is None and not out.requires_grad


class TestReshapePool:
    def test_reshape_round_trip(self):
        x = Tensor(np.arange(12.0), requires_grad=True)
        tensor_sum(mul(reshape(x, (3, 4)), Tensor(np.ones((3, 4))))).backward()
        np.testing.assert_array_equal(x.grad, np.ones(12))

    def test_reshape_bad_size(self):
        with pytest.raises(DimensionError):
            reshape(Tensor(np.ones(5)), (2, 3))

    def test_avg_pool2_values(self):
        x = Tensor(np.arange(16.0).reshape(1, 4, 4))
        out = avg_pool2(x)
        np.testing.assert_array_equal(out.data, [[[2.5, 4.5], [10.5, 12.5]]])

    def test_avg_pool2_odd_dims(self):
        with pytest.raises(DimensionError):
            avg_pool2(Tensor(np.ones((1, 3, 4))))


def test_parameter_repr_and_defaults():
    p = Parameter(np.zeros((2, 2)), "layer.w")
    assert p.requires_grad and p.name == "layer.w"
    assert "layer.w" in repr(p)


def test_finite_outputs_on_finite_inputs():
    # overflow-prone path: huge logits through the temperature softmax
    rng = np.random.default_rng(3)
    x = Tensor(rng.uniform(-1e8, 1e8, size=(64,)))
    for op in (square, absolute, relu):
        assert np.isfinite(op(x).data).all()
    assert np.isfinite(softmax_t(x, axis=0, temperature=1e-3).data).all()
