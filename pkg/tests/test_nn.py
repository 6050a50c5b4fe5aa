import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scesep import nn
from scesep.errors import NoForwardRecorded, ShapeMismatch
from scesep.seeding import rng_for


def grad_of(build, value):
    """Backward a scalar built from a Parameter and return its grad."""
    p = nn.Parameter(np.asarray(value, dtype=float), "p")
    p.zero_grad()
    out = build(p)
    out.backward()
    return p, out, p.grad


class TestElementwiseOps:
    def test_add_broadcast(self):
        a = nn.Parameter(np.zeros((2, 3)), "a")
        b = nn.Parameter(np.zeros(3), "b")
        a.zero_grad(), b.zero_grad()
        nn.tsum(nn.add(a, b)).backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.full(3, 2.0))

    def test_mul_grad(self):
        _, _, g = grad_of(lambda p: nn.tsum(nn.mul(p, p)), [1.0, -2.0, 3.0])
        np.testing.assert_allclose(g, [2.0, -4.0, 6.0])

    def test_sub_grad(self):
        a = nn.Parameter(np.array([5.0]), "a")
        b = nn.Parameter(np.array([3.0]), "b")
        a.zero_grad(), b.zero_grad()
        nn.tsum(nn.sub(a, b)).backward()
        assert a.grad[0] == 1.0 and b.grad[0] == -1.0

    def test_sigmoid_value_and_grad(self):
        _, out, g = grad_of(lambda p: nn.tsum(nn.sigmoid(p)), [0.0])
        assert out.data == pytest.approx(0.5)
        assert g[0] == pytest.approx(0.25)

    def test_tanh_grad(self):
        _, _, g = grad_of(lambda p: nn.tsum(nn.tanh(p)), [0.7])
        assert g[0] == pytest.approx(1.0 - np.tanh(0.7) ** 2)

    def test_log_sigmoid_matches_log_of_sigmoid(self):
        x = np.linspace(-30, 30, 101)
        out = nn.log_sigmoid(nn.Tensor(x)).data
        with np.errstate(over="ignore"):
            ref = np.log(1.0 / (1.0 + np.exp(-x)))
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_log_sigmoid_stable_extremes(self):
        out = nn.log_sigmoid(nn.Tensor(np.array([-1000.0, 1000.0]))).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(-1000.0)
        assert out[1] == pytest.approx(0.0, abs=1e-12)

    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(0).standard_normal((4, 5))
        s = nn.softmax(nn.Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0)

    def test_softmax_shift_invariant(self):
        x = np.random.default_rng(1).standard_normal((3, 4))
        a = nn.softmax(nn.Tensor(x)).data
        b = nn.softmax(nn.Tensor(x + 100.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_grad_orthogonal_to_constant(self):
        # d softmax / dx applied to a constant upstream grad is zero
        p = nn.Parameter(np.array([0.3, -1.2, 2.0]), "p")
        p.zero_grad()
        nn.tsum(nn.softmax(p)).backward()
        np.testing.assert_allclose(p.grad, 0.0, atol=1e-12)


class TestShapeOps:
    def test_matmul_batched(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((4, 2, 3))
        b = rng.standard_normal((4, 3, 5))
        out = nn.matmul(nn.Tensor(a), nn.Tensor(b)).data
        np.testing.assert_allclose(out, a @ b)

    def test_matmul_grad(self):
        a = nn.Parameter(np.array([[1.0, 2.0]]), "a")
        b = nn.Parameter(np.array([[3.0], [4.0]]), "b")
        a.zero_grad(), b.zero_grad()
        nn.tsum(nn.matmul(a, b)).backward()
        np.testing.assert_allclose(a.grad, [[3.0, 4.0]])
        np.testing.assert_allclose(b.grad, [[1.0], [2.0]])

    def test_reshape_round_trip_grad(self):
        p = nn.Parameter(np.arange(6.0).reshape(2, 3), "p")
        p.zero_grad()
        nn.tsum(nn.mul(nn.reshape(p, (3, 2)), 2.0)).backward()
        np.testing.assert_array_equal(p.grad, np.full((2, 3), 2.0))

    def test_concat_splits_grad(self):
        a = nn.Parameter(np.zeros((2, 2)), "a")
        b = nn.Parameter(np.zeros((2, 3)), "b")
        a.zero_grad(), b.zero_grad()
        scale = nn.Tensor(np.arange(5.0))
        nn.tsum(nn.mul(nn.concat([a, b], axis=1), scale)).backward()
        np.testing.assert_array_equal(a.grad, [[0, 1], [0, 1]])
        np.testing.assert_array_equal(b.grad, [[2, 3, 4], [2, 3, 4]])

    def test_swap_last(self):
        x = np.random.default_rng(3).standard_normal((2, 3, 4))
        out = nn.swap_last(nn.Tensor(x)).data
        np.testing.assert_array_equal(out, np.swapaxes(x, -1, -2))

    def test_time_slice_stack_inverse(self):
        x = np.random.default_rng(4).standard_normal((2, 5, 3))
        t = nn.Tensor(x)
        back = nn.stack_time([nn.time_slice(t, i) for i in range(5)])
        np.testing.assert_array_equal(back.data, x)

    def test_gather_rows_fan_in(self):
        table = nn.Parameter(np.zeros((4, 2)), "table")
        table.zero_grad()
        nn.tsum(nn.gather_rows(table, [1, 1, 3])).backward()
        np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])

    def test_backward_without_graph(self):
        with pytest.raises(NoForwardRecorded):
            nn.Tensor(np.ones(3)).backward()


class TestReductionOps:
    def test_tsum_axis(self):
        p = nn.Parameter(np.ones((2, 3)), "p")
        p.zero_grad()
        out = nn.tsum(p, axis=0)
        assert out.shape == (3,)
        nn.tsum(out).backward()
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))

    def test_tmean(self):
        _, out, g = grad_of(lambda p: nn.tmean(p), [2.0, 4.0, 6.0, 8.0])
        assert out.data == pytest.approx(5.0)
        np.testing.assert_allclose(g, 0.25)

    def test_diamond_graph_accumulates(self):
        # y = p*p + p : dy/dp = 2p + 1, reached through two paths
        _, _, g = grad_of(lambda p: nn.tsum(nn.add(nn.mul(p, p), p)), [3.0])
        assert g[0] == pytest.approx(7.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_expression_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    p = nn.Parameter(rng.standard_normal((3, 4)), "p")
    w = nn.Parameter(rng.standard_normal((4, 2)), "w")

    def loss():
        h = nn.tanh(nn.matmul(p, w))
        return nn.tsum(nn.mul(nn.softmax(h), nn.sigmoid(h)))

    assert nn.finite_difference_check(loss, [p, w]) < 1e-5


class TestLstm:
    def test_output_shape(self):
        rng = rng_for(0, "t")
        p = nn.init_lstm_params(3, 4, rng, "cell")
        x = nn.Tensor(rng.standard_normal((2, 5, 3)))
        assert nn.lstm_forward(x, p).shape == (2, 5, 4)

    def test_forget_bias_initialized_to_one(self):
        p = nn.init_lstm_params(3, 4, rng_for(0, "t"), "cell")
        np.testing.assert_array_equal(p.b_forget.data, np.ones(4))
        np.testing.assert_array_equal(p.b_input.data, np.zeros(4))

    def test_direction_is_time_reversal(self):
        rng = rng_for(1, "t")
        p = nn.init_lstm_params(3, 4, rng, "cell")
        x = rng.standard_normal((1, 6, 3))
        fwd_rev = nn.lstm_forward(nn.Tensor(x[:, ::-1]), p, "fwd").data[:, ::-1]
        bwd = nn.lstm_forward(nn.Tensor(x), p, "bwd").data
        np.testing.assert_allclose(bwd, fwd_rev, atol=1e-12)

    def test_causality(self):
        # forward output at time t must not depend on inputs after t
        rng = rng_for(2, "t")
        p = nn.init_lstm_params(3, 4, rng, "cell")
        x = rng.standard_normal((1, 6, 3))
        y = x.copy()
        y[:, 4:] += 10.0
        a = nn.lstm_forward(nn.Tensor(x), p).data
        b = nn.lstm_forward(nn.Tensor(y), p).data
        np.testing.assert_array_equal(a[:, :4], b[:, :4])
        assert np.abs(a[:, 4:] - b[:, 4:]).max() > 1e-6

    def test_blstm_concat(self):
        rng = rng_for(3, "t")
        pf = nn.init_lstm_params(3, 4, rng, "f")
        pb = nn.init_lstm_params(3, 4, rng, "b")
        x = nn.Tensor(rng.standard_normal((2, 5, 3)))
        out = nn.blstm_layer(x, pf, pb)
        assert out.shape == (2, 5, 8)
        np.testing.assert_array_equal(out.data[..., :4], nn.lstm_forward(x, pf, "fwd").data)
        np.testing.assert_array_equal(out.data[..., 4:], nn.lstm_forward(x, pb, "bwd").data)

    def test_bad_direction(self):
        p = nn.init_lstm_params(2, 2, rng_for(4, "t"), "cell")
        with pytest.raises(ValueError):
            nn.lstm_forward(nn.Tensor(np.zeros((1, 2, 2))), p, "sideways")

    def test_bad_rank(self):
        p = nn.init_lstm_params(2, 2, rng_for(5, "t"), "cell")
        with pytest.raises(ShapeMismatch):
            nn.lstm_forward(nn.Tensor(np.zeros((2, 2))), p)


class TestTimeAffine:
    def test_matches_loop(self):
        rng = rng_for(6, "t")
        x = rng.standard_normal((2, 3, 4))
        w = rng.standard_normal((4, 5))
        b = rng.standard_normal(5)
        out = nn.time_affine(nn.Tensor(x), nn.Tensor(w), nn.Tensor(b)).data
        np.testing.assert_allclose(out, x @ w + b)

    def test_width_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.time_affine(nn.Tensor(np.zeros((1, 2, 3))), nn.Tensor(np.zeros((4, 5))), nn.Tensor(np.zeros(5)))


class TestAdam:
    def test_first_step_is_lr_sized(self):
        p = nn.Parameter(np.array([1.0]), "p")
        opt = nn.Adam([p], lr=0.1)
        p.zero_grad()
        p.grad[:] = 123.0
        opt.step()
        # bias-corrected first step is lr * g/|g| regardless of magnitude
        assert p.data[0] == pytest.approx(1.0 - 0.1, abs=1e-6)

    def test_converges_on_quadratic(self):
        p = nn.Parameter(np.array([5.0, -3.0]), "p")
        opt = nn.Adam([p], lr=0.2)
        for _ in range(200):
            p.zero_grad()
            p.grad[:] = 2.0 * p.data
            opt.step()
        assert np.abs(p.data).max() < 1e-3

    def test_deterministic(self):
        def run():
            p = nn.Parameter(np.array([1.0, 2.0]), "p")
            opt = nn.Adam([p], lr=0.05)
            for i in range(10):
                p.zero_grad()
                p.grad[:] = np.sin(p.data + i)
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestClipGlobalNorm:
    def test_no_clip_below_threshold(self):
        p = nn.Parameter(np.zeros(3), "p")
        p.grad = np.array([1.0, 2.0, 2.0])
        total = nn.clip_global_norm([p], max_norm=5.0)
        assert total == pytest.approx(3.0)
        np.testing.assert_array_equal(p.grad, [1.0, 2.0, 2.0])

    def test_clips_to_max_norm(self):
        p = nn.Parameter(np.zeros(2), "p")
        p.grad = np.array([30.0, 40.0])
        nn.clip_global_norm([p], max_norm=5.0)
        assert np.linalg.norm(p.grad) == pytest.approx(5.0)
        # direction preserved
        assert p.grad[1] / p.grad[0] == pytest.approx(4.0 / 3.0)

    def test_joint_norm_across_params(self):
        a = nn.Parameter(np.zeros(1), "a")
        b = nn.Parameter(np.zeros(1), "b")
        a.grad, b.grad = np.array([3.0]), np.array([4.0])
        nn.clip_global_norm([a, b], max_norm=1.0)
        joint = np.sqrt(a.grad[0] ** 2 + b.grad[0] ** 2)
        assert joint == pytest.approx(1.0)


def test_finite_difference_detects_wrong_gradient():
    p = nn.Parameter(np.array([1.0, 2.0]), "p")

    def bad_loss():
        out = nn.tsum(nn.mul(p, p))
        orig = out._backward_fn

        out._backward_fn = lambda g: orig(g * 1.5)  # corrupt the gradient
        return out

    assert nn.finite_difference_check(bad_loss, [p]) > 0.1
