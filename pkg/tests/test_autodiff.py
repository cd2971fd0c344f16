import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from segsel.autodiff import (
    OptimizerState,
    ParamStore,
    Tensor,
    activation,
    add,
    avg_pool1d,
    backward,
    bce_loss,
    bce_value,
    conv1d_forward,
    dense_forward,
    elastic_net_penalty,
    elu,
    leaky_relu,
    log_clamped,
    mean_columns,
    mean_scalars,
    parameter,
    pick,
    rmsprop_step,
    scale,
    sigmoid,
    softmax,
    square,
    sub_const,
    temporal_conv,
    xavier_init,
)
from conftest import assert_grads_match


def conv1d_oracle(x, kernels, stride):
    """Direct nested-loop valid correlation."""
    cin, length = x.shape
    cout, _, k = kernels.shape
    out_len = (length - k) // stride + 1
    out = np.zeros((cout, out_len))
    for o in range(cout):
        for l in range(out_len):
            s = 0.0
            for c in range(cin):
                for j in range(k):
                    s += kernels[o, c, j] * x[c, l * stride + j]
            out[o, l] = s
    return out


class TestConv1d:
    def test_identity_tap_kernel(self):
        out = conv1d_forward(Tensor([[1, 2, 3, 4]]), Tensor([[[1, 0]]]), 1)
        np.testing.assert_array_equal(out.data, [[1, 2, 3]])

    def test_box_sum(self):
        out = conv1d_forward(Tensor([[1, 1, 1]]), Tensor([[[1, 1, 1]]]), 1)
        np.testing.assert_array_equal(out.data, [[3]])

    def test_strided_vs_nested_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 8))
        k = rng.standard_normal((3, 2, 3))
        out = conv1d_forward(Tensor(x), Tensor(k), 2)
        assert out.data.shape == (3, 3)
        np.testing.assert_allclose(out.data, conv1d_oracle(x, k, 2), rtol=1e-12)

    def test_shape_errors_name_dimension(self):
        with pytest.raises(ValueError, match="Cin"):
            conv1d_forward(Tensor(np.zeros((2, 8))), Tensor(np.zeros((3, 4, 3))), 1)
        with pytest.raises(ValueError, match="L=2"):
            conv1d_forward(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 1, 5))), 1)
        with pytest.raises(ValueError, match="stride"):
            conv1d_forward(Tensor(np.zeros((1, 8))), Tensor(np.zeros((1, 1, 3))), 0)


class TestDense:
    def test_basis_vector_picks_column(self):
        out = dense_forward(Tensor([1, 0]), Tensor([[2, 3], [4, 5]]), Tensor([0, 0]))
        np.testing.assert_array_equal(out.data, [2, 4])

    def test_zero_input_passes_bias(self):
        out = dense_forward(Tensor([0, 0]), Tensor([[9, 9], [9, 9]]), Tensor([7, -1]))
        np.testing.assert_array_equal(out.data, [7, -1])

    def test_random_vs_matmul_oracle(self):
        rng = np.random.default_rng(11)
        x, w, b = rng.standard_normal(4), rng.standard_normal((3, 4)), rng.standard_normal(3)
        out = dense_forward(Tensor(x), Tensor(w), Tensor(b))
        expected = np.array([sum(w[i, j] * x[j] for j in range(4)) + b[i] for i in range(3)])
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="input size 3"):
            dense_forward(Tensor([1, 2, 3]), Tensor([[1, 2]]), Tensor([0]))


class TestActivations:
    def test_softmax_symmetry(self):
        np.testing.assert_allclose(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(np.array(0.0))).item() == 0.5

    def test_elu_leaky_closed_form(self):
        pts = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        np.testing.assert_allclose(
            elu(Tensor(pts)).data,
            np.where(pts > 0, pts, np.exp(pts) - 1.0), rtol=1e-12)
        np.testing.assert_allclose(
            leaky_relu(Tensor(pts)).data,
            np.where(pts > 0, pts, 0.01 * pts), rtol=1e-12)

    def test_softmax_requires_vector(self):
        with pytest.raises(ValueError, match="vector"):
            softmax(Tensor(np.zeros((2, 2))))

    def test_unknown_activation_kind(self):
        with pytest.raises(ValueError, match="unknown activation"):
            activation(Tensor([0.0]), "tanh")

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    def test_softmax_sums_to_one(self, logits):
        y = softmax(Tensor(np.array(logits))).data
        assert abs(y.sum() - 1.0) <= 1e-9
        assert np.all(y > 0) and np.all(y < 1 + 1e-12)


class TestBce:
    def test_half_probability(self):
        assert bce_loss(Tensor(np.array(0.5)), 1).item() == pytest.approx(math.log(2), rel=1e-12)

    def test_perfect_prediction_limit(self):
        assert bce_loss(Tensor(np.array(1.0 - 1e-9)), 1).item() < 1e-6

    def test_batch_mean_vs_scalar_sum_oracle(self):
        rng = np.random.default_rng(3)
        ps = rng.uniform(0.05, 0.95, 5)
        ys = rng.integers(0, 2, 5)
        batch = mean_scalars([bce_loss(Tensor(np.array(p)), int(y)) for p, y in zip(ps, ys)])
        expected = sum(-(y * math.log(p) + (1 - y) * math.log(1 - p)) for p, y in zip(ps, ys)) / 5
        assert batch.item() == pytest.approx(expected, rel=1e-12)

    def test_value_matches_node(self):
        assert bce_value(0.3, 0) == bce_loss(Tensor(np.array(0.3)), 0).item()


class TestElasticNet:
    def test_paper_coefficients(self):
        store = ParamStore()
        store.add("w", [1.0, -1.0])
        assert elastic_net_penalty(store, 0.01, 0.001).item() == pytest.approx(0.022, rel=1e-12)

    def test_zero_coefficients(self):
        store = ParamStore()
        store.add("w", np.random.default_rng(0).standard_normal(6))
        assert elastic_net_penalty(store, 0.0, 0.0).item() == 0.0

    def test_random_store_vs_elementwise_oracle(self):
        rng = np.random.default_rng(5)
        store = ParamStore()
        vals = []
        for i in range(3):
            arr = rng.standard_normal((2, 2))
            store.add(f"p{i}", arr)
            vals.append(arr)
        l1, l2 = 0.3, 0.7
        expected = sum(l1 * abs(v) + l2 * v * v for arr in vals for v in arr.ravel())
        assert elastic_net_penalty(store, l1, l2).item() == pytest.approx(expected, rel=1e-12)


class TestBackward:
    def test_linear_gradient(self):
        w = parameter(np.array(2.0))
        x = Tensor(np.array(3.0))

        def build():
            return Tensor(w.data * x.data, (w, x), lambda g: (g * x.data, g * w.data))

        loss = build()
        backward(loss)
        assert w.grad == pytest.approx(3.0)

    def test_backward_requires_recorded_forward(self):
        with pytest.raises(RuntimeError, match="no recorded forward"):
            backward(parameter(np.array(1.0)))

    def test_backward_requires_scalar(self):
        w = parameter([1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            backward(scale(w, 2.0))

    def test_unreachable_params_stay_zero(self):
        a, b = parameter(np.array(1.5)), parameter(np.array(2.5))
        backward(scale(a, 4.0))
        assert a.grad == pytest.approx(4.0)
        assert b.grad == 0.0

    def test_elastic_net_additivity(self):
        store = ParamStore()
        w = store.add("w", [0.4, -0.8])
        x = Tensor(np.array([1.0, 2.0]))

        base = dense_forward(x, parameter([[1.0, 1.0]]), parameter([0.0]))
        # gradient of base + penalty equals base gradient + penalty gradient
        w2 = store["w"]
        lin = pick(dense_forward(x, Tensor(np.stack([w2.data])), Tensor([0.0])), 0)
        del base, lin

        def build_base():
            return pick(dense_forward(x, _as_row(w), Tensor([0.0])), 0)

        def build_pen():
            return elastic_net_penalty(store, 0.05, 0.02)

        def build_sum():
            return add(build_base(), build_pen())

        store.zero_grad()
        backward(build_base())
        g_base = w.grad.copy()
        store.zero_grad()
        backward(build_pen())
        g_pen = w.grad.copy()
        store.zero_grad()
        backward(build_sum())
        np.testing.assert_allclose(w.grad, g_base + g_pen, rtol=1e-12)


def _as_row(t):
    return Tensor(t.data[None, :], (t,), lambda g: (g[0],))


class TestFiniteDifferenceSuite:
    """Analytic vs central-difference gradients for every layer op."""

    def test_dense(self):
        rng = np.random.default_rng(21)
        w = parameter(rng.standard_normal((3, 4)))
        b = parameter(rng.standard_normal(3))
        x = Tensor(rng.standard_normal(4))

        def build():
            return pick(softmax(dense_forward(x, w, b)), 1)

        assert_grads_match(build, [w, b])

    def test_conv1d(self):
        rng = np.random.default_rng(22)
        k = parameter(rng.standard_normal((2, 2, 3)))
        x = parameter(rng.standard_normal((2, 9)))

        def build():
            out = conv1d_forward(x, k, 2)
            return pick(softmax(mean_columns(out, range(out.data.shape[1]))), 0)

        assert_grads_match(build, [k, x])

    def test_temporal_conv(self):
        rng = np.random.default_rng(23)
        k = parameter(rng.standard_normal((3, 4)))
        x = parameter(rng.standard_normal((2, 9)))

        def build():
            out = temporal_conv(x, k)
            return pick(sigmoid(mean_columns(out, [0, 2, 4])), 0)

        assert_grads_match(build, [k, x])

    @pytest.mark.parametrize("kind", ["elu", "leaky_relu", "square", "sigmoid"])
    def test_pointwise_activations(self, kind):
        rng = np.random.default_rng(24)
        x = parameter(rng.standard_normal(6))

        def build():
            return pick(activation(x, kind), 2)

        assert_grads_match(build, [x])

    def test_softmax_grad(self):
        x = parameter(np.random.default_rng(25).standard_normal(5))

        def build():
            return pick(softmax(x), 3)

        assert_grads_match(build, [x])

    def test_avg_pool_bias_and_scale(self):
        rng = np.random.default_rng(26)
        x = parameter(rng.standard_normal((2, 7)))
        b = parameter(rng.standard_normal(2))

        def build():
            h = avg_pool1d(add_bias_rows_wrap(x, b), 3)
            return scale(pick(mean_columns(h, [0, 1]), 1), 1.7)

        assert_grads_match(build, [x, b])

    def test_bce_grad(self):
        p = parameter(np.array(0.37))

        def build():
            return bce_loss(sigmoid_scalar(p), 1)

        assert_grads_match(build, [p])

    def test_log_clamped_and_sub_const(self):
        p = parameter(np.array(0.42))

        def build():
            return scale(log_clamped(pick(softmax(stack2(p)), 0)), -2.0)

        assert_grads_match(build, [p])

        q = parameter(np.array(0.9))

        def build2():
            return scale(square(sub_const(q, 0.3)), 0.5)

        assert_grads_match(build2, [q])

    def test_elastic_net_grad(self):
        store = ParamStore()
        store.add("a", np.random.default_rng(27).standard_normal((2, 3)) + 0.2)

        def build():
            return elastic_net_penalty(store, 0.3, 0.11)

        assert_grads_match(build, store.tensors())


def add_bias_rows_wrap(x, b):
    from segsel.autodiff import add_bias_rows
    return add_bias_rows(x, b)


def sigmoid_scalar(p):
    return pick(sigmoid(stack2(p)), 0)


def stack2(p):
    def bwd(g):
        return (g[0] + 0.5 * g[1],)
    return Tensor(np.array([p.data, 0.5 * p.data]), (p,), bwd)


class TestRmsprop:
    def test_zero_gradient_is_noop(self):
        store = ParamStore()
        w = store.add("w", [1.0, -2.0, 3.0])
        opt = OptimizerState(store, lr=0.1)
        before = w.data.copy()
        rmsprop_step(store, opt)
        np.testing.assert_array_equal(w.data, before)

    def test_single_step_magnitude(self):
        store = ParamStore()
        w = store.add("w", [0.0])
        w.grad[...] = 1.0
        opt = OptimizerState(store, lr=0.1, decay=0.9, eps=1e-8)
        rmsprop_step(store, opt)
        expected = 0.1 * 1.0 / (math.sqrt(0.1) + 1e-8)
        assert w.data[0] == pytest.approx(-expected, rel=1e-12)

    def test_accumulator_fixed_point(self):
        store = ParamStore()
        w = store.add("w", [0.0])
        opt = OptimizerState(store, lr=1e-4, decay=0.9)
        g = 2.0
        for _ in range(200):
            w.grad[...] = g
            rmsprop_step(store, opt)
        # closed form: acc_n = g^2 * (1 - decay^n)
        expected = g * g * (1.0 - 0.9 ** 200)
        assert opt.acc["w"][0] == pytest.approx(expected, rel=1e-9)
        assert abs(opt.acc["w"][0] - g * g) < 1e-8

    def test_invalid_hyperparameters(self):
        store = ParamStore()
        store.add("w", [0.0])
        with pytest.raises(ValueError):
            OptimizerState(store, lr=0.1, decay=1.0)
        with pytest.raises(ValueError):
            OptimizerState(store, lr=0.1, eps=0.0)


class TestXavier:
    def test_bound(self):
        vals = xavier_init((3, 3), seed=0)
        assert np.all(np.abs(vals) <= 1.0)  # sqrt(6/(3+3)) = 1

    def test_determinism(self):
        np.testing.assert_array_equal(xavier_init((4, 5), seed=42), xavier_init((4, 5), seed=42))

    def test_monte_carlo_variance(self):
        fan_in, fan_out = 250, 150
        vals = xavier_init((fan_out, fan_in), seed=9)  # 37500 entries
        vals = np.concatenate([vals.ravel(), xavier_init((fan_out, fan_in), seed=10).ravel(),
                               xavier_init((fan_out, fan_in), seed=11).ravel()])
        assert vals.size >= 1e5
        target = 2.0 / (fan_in + fan_out)
        assert abs(vals.var() - target) / target < 0.05

    def test_needs_two_fan_dims(self):
        with pytest.raises(ValueError, match="fan"):
            xavier_init((5,), seed=0)


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("w", [1.0])
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", [2.0])

    def test_grad_buffer_shapes(self):
        store = ParamStore()
        t = store.add("w", np.zeros((2, 3)))
        assert t.grad.shape == (2, 3)

    def test_state_roundtrip(self):
        store = ParamStore()
        store.add("a", [1.0, 2.0])
        store.add("b", [[3.0]])
        state = store.state_dict()
        store["a"].data[...] = 0.0
        store.load_state(state)
        np.testing.assert_array_equal(store["a"].data, [1.0, 2.0])
        with pytest.raises(ValueError, match="mismatch"):
            store.load_state({"a": np.zeros(2)})


class TestFiniteGuard:
    def test_nan_forward_raises(self):
        with pytest.raises(FloatingPointError):
            Tensor([np.nan])

    def test_inf_through_op_raises(self):
        x = Tensor([1e308])
        with pytest.raises(FloatingPointError):
            scale(x, 1e10)
