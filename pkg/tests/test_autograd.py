import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sebn_adapter.autograd import (
    BatchNormState,
    Tensor,
    add,
    batchnorm2d,
    channel_scale,
    clamp_min,
    concat,
    conv2d,
    cross_entropy,
    exp,
    global_avg_pool,
    grad_check,
    l2_normalize,
    linear,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    tanh,
    transpose,
    where,
)
from sebn_adapter.autograd import sum as tsum
from sebn_adapter.errors import ContractError, NonFiniteError, ShapeError

TOL = 1e-4


def project(t: Tensor) -> Tensor:
    """Scalar with a generic gradient: <t, R> for a fixed R of t's shape."""
    r = np.random.default_rng(t.size).uniform(-1, 1, t.shape)
    return tsum(mul(t, Tensor(r)))


def uniform(gen: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(gen.uniform(-1, 1, shape))


def bn_state(channels: int, momentum=0.1) -> BatchNormState:
    return BatchNormState(
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
        num_batches_tracked=np.zeros(()),
        momentum=momentum,
    )


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        out = conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        assert_array_equal(out.data, x.data)

    def test_ones_kernel_center_and_corner(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), pad=1)
        assert out.data[0, 0, 1, 1] == 9
        assert out.data[0, 0, 0, 0] == 4
        assert out.data[0, 0, 2, 2] == 4

    @pytest.mark.parametrize(
        ("shape", "stride", "expected"),
        [((1, 2, 5, 7), 1, (1, 3, 5, 7)), ((1, 2, 5, 7), 2, (1, 3, 3, 4))],
    )
    def test_output_shape(self, shape, stride, expected):
        out = conv2d(Tensor(np.zeros(shape)), Tensor(np.zeros((3, 2, 3, 3))), stride=stride)
        assert out.shape == expected

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("k", [1, 3])
    def test_gradients(self, f64, gen, stride, k):
        x = uniform(gen, 2, 2, 5, 4)
        w = uniform(gen, 3, 2, k, k)
        b = uniform(gen, 3)
        err = grad_check(lambda x, w, b: project(conv2d(x, w, b, stride=stride)), [x, w, b])
        assert err < TOL

    def test_sum_gradient(self, f64, gen):
        x, w, b = uniform(gen, 1, 2, 4, 4), uniform(gen, 2, 2, 3, 3), uniform(gen, 2)
        err = grad_check(lambda x, w, b: tsum(conv2d(x, w, b)), [x, w, b])
        assert err < TOL

    def test_contract_violations(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ShapeError):
            conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ContractError):
            conv2d(x, Tensor(np.zeros((1, 2, 5, 5))))
        with pytest.raises(ContractError):
            conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), stride=3)
        with pytest.raises(ContractError):
            conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), pad=0)


class TestLinear:
    def test_identity(self):
        out = linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
        assert_allclose(out.data, [[1.0, 2.0]])

    def test_hand_value(self):
        out = linear(Tensor([[1.0, 1.0]]), Tensor([[1.0, -1.0]]), Tensor([0.5]))
        assert_allclose(out.data, [[0.5]])

    def test_gradient(self, f64, gen):
        x, w, b = uniform(gen, 3, 4), uniform(gen, 2, 4), uniform(gen, 2)
        assert grad_check(lambda x, w, b: project(linear(x, w, b)), [x, w, b]) < TOL

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestElementwise:
    def test_values(self):
        assert_array_equal(relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
        assert sigmoid(Tensor([0.0])).item() == 0.5

    def test_sigmoid_open_interval(self, f64):
        y = sigmoid(Tensor([-30.0, -5.0, 0.0, 5.0, 30.0])).data
        assert np.all(y > 0)
        assert np.all(y < 1)

    @pytest.mark.parametrize("op", [relu, sigmoid, tanh, exp])
    def test_gradients(self, f64, gen, op):
        data = gen.uniform(-1, 1, (3, 4))
        data[np.abs(data) < 1e-3] = 0.5
        assert grad_check(lambda x: project(op(x)), Tensor(data)) < TOL

    def test_log_sqrt_gradients(self, f64, gen):
        x = Tensor(gen.uniform(0.5, 1.5, (3, 4)))
        assert grad_check(lambda x: project(log(x)), x) < TOL
        assert grad_check(lambda x: project(sqrt(x)), x) < TOL

    def test_clamp_min_gradient(self, f64, gen):
        data = gen.uniform(-1, 1, (4, 3))
        data[np.abs(data) < 1e-3] = 0.5
        assert grad_check(lambda x: project(clamp_min(x, 0.0)), Tensor(data)) < TOL

    def test_log_requires_positive(self):
        with pytest.raises(ContractError):
            log(Tensor([1.0, 0.0]))

    def test_non_finite_is_an_error(self, f64):
        with pytest.raises(NonFiniteError):
            exp(Tensor([1000.0]))


class TestBinary:
    def test_add_mul_gradients(self, f64, gen):
        a, b = uniform(gen, 2, 3), uniform(gen, 2, 3)
        assert grad_check(lambda a, b: project(add(a, b)), [a, b]) < TOL
        assert grad_check(lambda a, b: project(mul(a, b)), [a, b]) < TOL

    def test_scalar_tensor_broadcast(self, f64, gen):
        a, s = uniform(gen, 2, 3), Tensor(np.array(0.7))
        assert grad_check(lambda a, s: project(mul(a, s)), [a, s]) < TOL

    def test_no_general_broadcasting(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))

    @pytest.mark.parametrize(("sa", "sb"), [((3, 4), (4, 2)), ((2, 3, 4), (2, 4, 5))])
    def test_matmul_gradient(self, f64, gen, sa, sb):
        a, b = uniform(gen, *sa), uniform(gen, *sb)
        assert grad_check(lambda a, b: project(matmul(a, b)), [a, b]) < TOL

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_where_gradient(self, f64, gen):
        mask = gen.uniform(size=(3, 3)) > 0.5
        a, b = uniform(gen, 3, 3), uniform(gen, 3, 3)
        assert grad_check(lambda a, b: project(where(mask, a, b)), [a, b]) < TOL


class TestReductions:
    def test_mean_axis_gradient(self, f64, gen):
        x = uniform(gen, 2, 3, 4)
        assert grad_check(lambda x: project(mean(x, axis=1)), x) < TOL
        assert grad_check(lambda x: project(mean(x, axis=(0, 2), keepdims=True)), x) < TOL

    def test_softmax(self, f64, gen):
        x = uniform(gen, 3, 5)
        assert_allclose(softmax(x, axis=1).data.sum(axis=1), 1.0, atol=1e-6)
        assert grad_check(lambda x: project(softmax(x, axis=1)), x) < TOL
        assert grad_check(lambda x: project(softmax(x, axis=0)), x) < TOL

    def test_l2_normalize(self, f64, gen):
        x = uniform(gen, 4, 3)
        assert_allclose(np.linalg.norm(l2_normalize(x, axis=1).data, axis=1), 1.0, atol=1e-6)
        assert grad_check(lambda x: project(l2_normalize(x, axis=1)), x) < TOL

    def test_concat(self, f64, gen):
        a, b = uniform(gen, 2, 3), uniform(gen, 2, 1)
        out = concat([a, b], axis=1)
        assert out.shape == (2, 4)
        assert grad_check(lambda a, b: project(concat([a, b], axis=1)), [a, b]) < TOL
        with pytest.raises(ShapeError):
            concat([a, uniform(gen, 3, 1)], axis=1)

    def test_reshape_transpose(self, f64, gen):
        x = uniform(gen, 2, 3, 4)
        f = lambda x: project(reshape(transpose(x, (0, 2, 1)), (8, 3)))  # noqa: E731
        assert grad_check(f, x) < TOL

    def test_cross_entropy(self, f64, gen):
        logits = uniform(gen, 4, 3)
        labels = [0, 2, 1, 2]
        value = cross_entropy(logits, labels).item()
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        assert value == pytest.approx(-logp[np.arange(4), labels].mean(), abs=1e-12)
        assert grad_check(lambda x: cross_entropy(x, labels), logits) < TOL
        with pytest.raises(ContractError):
            cross_entropy(logits, [0, 1, 2, 3])


class TestChannelOps:
    def test_global_avg_pool(self):
        out = global_avg_pool(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
        assert out.data[0, 0] == 2.5
        assert global_avg_pool(Tensor(np.full((1, 2, 3, 3), 1.5))).data[0, 1] == 1.5

    def test_global_avg_pool_gradient_is_uniform(self, f64):
        x = Tensor(np.zeros((1, 1, 2, 3)), requires_grad=True)
        tsum(global_avg_pool(x)).backward()
        assert_allclose(x.grad, np.full(x.shape, 1 / 6))

    def test_channel_scale_gradient(self, f64, gen):
        x, s = uniform(gen, 2, 3, 2, 2), uniform(gen, 2, 3)
        assert grad_check(lambda x, s: project(channel_scale(x, s)), [x, s]) < TOL
        with pytest.raises(ShapeError):
            channel_scale(x, uniform(gen, 3, 2))


class TestBatchNorm:
    def test_constant_input(self, f64):
        x = Tensor(np.full((2, 3, 2, 2), 4.0))
        out = batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), bn_state(3), True)
        assert_allclose(out.data, 0.0, atol=1e-6)

    def test_standardizes(self, f64, gen):
        x = Tensor(gen.standard_normal((4, 2, 5, 5)) * 3 + 1)
        out = batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), bn_state(2), True).data
        assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-9)
        assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_affine(self, f64, gen):
        x = Tensor(gen.standard_normal((4, 2, 5, 5)))
        gamma, beta = Tensor(np.full(2, 2.0)), Tensor(np.full(2, 3.0))
        out = batchnorm2d(x, gamma, beta, bn_state(2), True).data
        assert_allclose(out.mean(axis=(0, 2, 3)), 3.0, atol=1e-9)
        assert_allclose(out.std(axis=(0, 2, 3)), 2.0, atol=1e-3)

    def test_running_stats(self, f64, gen):
        x = Tensor(gen.standard_normal((2, 1, 3, 3)) + 2)
        state = bn_state(1)
        batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), state, True)
        m = x.size
        assert_allclose(state.running_mean, 0.1 * x.data.mean())
        assert_allclose(state.running_var, 0.9 + 0.1 * x.data.var() * m / (m - 1))
        assert state.num_batches_tracked == 1

    def test_cumulative_average(self, f64, gen):
        state = bn_state(1, momentum=None)
        means = []
        for _ in range(3):
            x = Tensor(gen.standard_normal((2, 1, 3, 3)))
            batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), state, True)
            means.append(x.data.mean())
        assert_allclose(state.running_mean, np.mean(means))

    def test_eval_needs_statistics(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        state = bn_state(1)
        with pytest.raises(ContractError):
            batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), state, False)
        state.seed()
        batchnorm2d(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), state, False)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, f64, gen, training):
        x, gamma, beta = uniform(gen, 2, 3, 2, 3), uniform(gen, 3), uniform(gen, 3)
        state = bn_state(3)
        state.seed()
        f = lambda x, g, b: project(batchnorm2d(x, g, b, state, training))  # noqa: E731
        assert grad_check(f, [x, gamma, beta]) < TOL


class TestBackward:
    def test_sum(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        tsum(x).backward()
        assert_array_equal(x.grad, np.ones((2, 3)))

    def test_sum_of_squares(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        tsum(mul(x, x)).backward()
        assert_array_equal(x.grad, 2 * x.data)

    def test_accumulates(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = tsum(x)
        loss.backward()
        loss.backward()
        assert_array_equal(x.grad, [2.0, 2.0, 2.0])

    def test_shared_node_visited_once(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = mul(x, 2.0)
        tsum(add(y, y)).backward()
        assert_array_equal(x.grad, [4.0])

    def test_non_scalar(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = mul(x, 2.0)
        assert not y.requires_grad
        assert y.is_leaf


class TestGradCheck:
    def test_sum_is_exact(self, f64):
        x = Tensor(np.array([0.5, -1.25, 2.0, 0.125]))
        assert grad_check(lambda x: tsum(x), x, eps=2**-10) == 0.0

    def test_sum_of_squares(self, f64, gen):
        x = uniform(gen, 5)
        assert grad_check(lambda x: tsum(mul(x, x)), x, eps=1e-5) < 1e-7

    def test_needs_64_bit(self):
        with pytest.raises(ContractError):
            grad_check(lambda x: tsum(x), Tensor(np.ones(2, dtype=np.float32)))


def test_deterministic(gen):
    x, w = uniform(gen, 2, 2, 4, 4), uniform(gen, 3, 2, 3, 3)
    assert_array_equal(conv2d(x, w).data, conv2d(x, w).data)


def test_zero_extent_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))
