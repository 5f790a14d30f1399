"""Tensor engine: forward semantics, gradients, double backprop, graphs."""

import numpy as np
import pytest

from ms3d.tensor import (
    Tensor,
    UnreachableGradientWarning,
    backward,
    finite_diff_check,
    forward_op,
    no_grad,
    trace,
)
from opcases import worst_errors


class TestForward:
    def test_avg_pool_block_mean(self):
        out = forward_op("avg_pool2d", Tensor([[1.0, 0.0], [0.0, 0.0]]), k=2, stride=2)
        assert out.values.shape == (1, 1)
        assert out.values[0, 0] == 0.25

    def test_upsample_replicates(self):
        out = forward_op("upsample_nearest", Tensor([[0.25]]), factor=2)
        assert np.array_equal(out.values, np.full((2, 2), 0.25))

    def test_sigmoid_at_zero(self):
        assert forward_op("sigmoid", Tensor(0.0)).item() == 0.5

    def test_softplus_stable_for_large_inputs(self):
        out = forward_op("softplus", Tensor([800.0, -800.0]))
        assert np.all(np.isfinite(out.values))
        assert out.values[0] == pytest.approx(800.0)

    def test_shape_mismatch_names_op(self):
        with pytest.raises(ValueError, match="matmul"):
            forward_op("matmul", Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ValueError, match="avg_pool2d"):
            forward_op("avg_pool2d", Tensor(np.ones((5, 5))), k=2, stride=2)

    def test_log_rejects_non_positive(self):
        with pytest.raises(ValueError, match="log"):
            forward_op("log", Tensor([1.0, 0.0]))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown op kind"):
            forward_op("transmogrify", Tensor(1.0))

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((6, 6)))
        for kind in ("tanh", "softplus", "sigmoid", "abs", "square", "neg"):
            assert np.all(np.isfinite(forward_op(kind, x).values))


class TestBackward:
    def test_square_gradient(self):
        x = Tensor(3.0, requires_grad=True)
        y = forward_op("square", x)
        assert backward(y, x).item() == 6.0

    def test_double_backprop_cubic(self):
        # g(x) = d(x^3)/dx = 3x^2, dg/dx at 2 = 12
        x = Tensor(2.0, requires_grad=True)
        y = forward_op("mul", forward_op("square", x), x)
        g = backward(y, x, retain_higher_order=True)
        gg = backward(g, x)
        assert gg.item() == pytest.approx(12.0, rel=1e-12)

    def test_pool_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal((4, 4))

        def f(x):
            return forward_op("mean_reduce", forward_op("avg_pool2d", x, k=2, stride=2))

        assert finite_diff_check(f, Tensor(x0), h=1e-5) < 1e-6

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal(6), requires_grad=True)
        f = forward_op("sum_reduce", forward_op("square", x))
        g = forward_op("sum_reduce", forward_op("tanh", x))
        a, b = 2.5, -1.25
        combined = forward_op("add", forward_op("mul", Tensor(a), f), forward_op("mul", Tensor(b), g))
        grad_combined = backward(combined, x).values
        grad_parts = a * backward(f, x).values + b * backward(g, x).values
        assert np.allclose(grad_combined, grad_parts, rtol=1e-12, atol=1e-12)

    def test_gradient_accumulates_over_reuse(self):
        x = Tensor(1.5, requires_grad=True)
        y = forward_op("add", forward_op("square", x), forward_op("mul", x, Tensor(3.0)))
        assert backward(y, x).item() == pytest.approx(2 * 1.5 + 3.0)

    def test_unreachable_target_warns_and_zeroes(self):
        x = Tensor(np.ones(3), requires_grad=True)
        z = Tensor(np.ones(3), requires_grad=True)
        y = forward_op("sum_reduce", x)
        with pytest.warns(UnreachableGradientWarning):
            g = backward(y, [x, z])
        assert np.array_equal(g[0].values, np.ones(3))
        assert np.array_equal(g[1].values, np.zeros(3))

    def test_non_scalar_output_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            backward(forward_op("square", x), x)

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = forward_op("sum_reduce", x)
        assert y.op is None and not y.requires_grad

    def test_detached_gradients_are_leaves(self):
        x = Tensor(2.0, requires_grad=True)
        g = backward(forward_op("square", x), x)
        assert g.op is None and not g.requires_grad


class TestOpGradients:
    def test_every_op_matches_central_differences(self):
        failures = [(label, err) for label, err in worst_errors(h=1e-5) if err >= 1e-6]
        assert not failures, f"ops off finite differences: {failures}"


class TestSecondOrder:
    def test_hvp_matches_finite_differences_of_gradient(self):
        rng = np.random.default_rng(11)
        x0 = rng.uniform(-1.0, 1.0, 8)
        v = rng.standard_normal(8)

        def f(x):
            inner = forward_op("tanh", forward_op("mul", x, Tensor(1.3)))
            return forward_op("sum_reduce", forward_op("square", inner))

        x = Tensor(x0, requires_grad=True)
        g = backward(f(x), x, retain_higher_order=True)
        hvp = backward(forward_op("sum_reduce", forward_op("mul", g, Tensor(v))), x).values

        h = 1e-5
        g_hi = backward(f(t := Tensor(x0 + h * v, requires_grad=True)), t).values
        g_lo = backward(f(t := Tensor(x0 - h * v, requires_grad=True)), t).values
        numeric = (g_hi - g_lo) / (2 * h)
        rel = np.abs(hvp - numeric) / (np.abs(hvp) + np.abs(numeric) + 1e-12)
        assert rel.max() < 1e-4

    def test_second_order_through_pool_and_upsample(self):
        rng = np.random.default_rng(12)
        x0 = rng.standard_normal((4, 4))

        def grad_of_descriptor(values):
            x = Tensor(values, requires_grad=True)
            pooled = forward_op("avg_pool2d", forward_op("square", x), k=2, stride=2)
            up = forward_op("upsample_nearest", pooled, factor=2)
            y = forward_op("mse", forward_op("square", x), up)
            return backward(y, x, retain_higher_order=True), x

        g, x = grad_of_descriptor(x0)
        v = np.ones((4, 4))
        hvp = backward(forward_op("sum_reduce", forward_op("mul", g, Tensor(v))), x).values
        h = 1e-5
        hi, xh = grad_of_descriptor(x0 + h * v)
        lo, xl = grad_of_descriptor(x0 - h * v)
        numeric = (hi.values - lo.values) / (2 * h)
        rel = np.abs(hvp - numeric) / (np.abs(hvp) + np.abs(numeric) + 1e-12)
        assert rel.max() < 1e-4


class TestFiniteDiffCheck:
    def test_sum_tanh(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.uniform(-1.0, 1.0, 8))
        err = finite_diff_check(lambda t: forward_op("sum_reduce", forward_op("tanh", t)), x)
        assert err < 1e-6

    def test_constant_function_has_zero_error(self):
        x = Tensor(np.ones(4))
        err = finite_diff_check(lambda t: forward_op("mul", forward_op("sum_reduce",
                                forward_op("mul", t, Tensor(np.zeros(4)))), Tensor(1.0)), x)
        assert err == 0.0

    def test_non_finite_rejected(self):
        x = Tensor([2.0])
        with pytest.raises(ValueError, match="non-finite"), np.errstate(over="ignore"):
            finite_diff_check(lambda t: forward_op("sum_reduce", forward_op(
                "mul", forward_op("square", forward_op("square", t)), Tensor(1e308))), x)


class TestDeterminism:
    def _run(self):
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        y = forward_op("mean_reduce", forward_op("tanh", forward_op("matmul", x, w)))
        gx, gw = backward(y, [x, w])
        return y.values.tobytes(), gx.values.tobytes(), gw.values.tobytes()

    def test_bit_identical_across_runs(self):
        assert self._run() == self._run()


class TestGraph:
    def test_replay_reproduces_forward(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        y = forward_op("mean_reduce", forward_op("square",
                       forward_op("avg_pool2d", forward_op("tanh", x), k=3, stride=3)))
        graph = trace(y)
        assert graph.replay().tobytes() == y.values.tobytes()

    def test_replay_with_new_leaf_values(self):
        x = Tensor(np.full((2, 2), 2.0), requires_grad=True)
        y = forward_op("sum_reduce", forward_op("square", x))
        graph = trace(y)
        fresh = np.full((2, 2), 3.0)
        assert graph.replay({x.node_id: fresh}) == pytest.approx(36.0)

    def test_records_topologically_ordered(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = forward_op("sum_reduce", forward_op("square", forward_op("tanh", x)))
        graph = trace(y)
        produced = set(graph.leaves)
        for rec in graph.records:
            assert all(i in produced for i in rec.input_ids)
            produced.add(rec.output_id)

    def test_replay_rejects_non_leaf_override(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = forward_op("square", x)
        z = forward_op("sum_reduce", y)
        graph = trace(z)
        with pytest.raises(ValueError, match="leaf"):
            graph.replay({y.node_id: np.ones(3)})
