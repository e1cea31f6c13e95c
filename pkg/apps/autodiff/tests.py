import numpy as np
from django.test import SimpleTestCase

from apps.autodiff import ops
from apps.autodiff.exceptions import DomainError, GradientError, ShapeError
from apps.autodiff.services import backward, gradient_check, zero_grads
from apps.autodiff.tensor import Graph, Tensor, no_grad


def _param(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _away_from_zero(rng, shape):
    """Values in [-1, -0.1] U [0.1, 1] so kinks at zero stay out of reach."""
    magnitude = rng.uniform(0.1, 1.0, size=shape)
    return Tensor(magnitude * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)


class ForwardOpTestCase(SimpleTestCase):
    """Forward values of single ops, plus the shape and domain errors they raise."""

    def test_matmul_with_identity(self):
        """Multiplying by the identity returns the left operand unchanged."""
        out = ops.forward_op("matmul", Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.values, [[1.0, 2.0], [3.0, 4.0]])

    def test_sigmoid_at_zero(self):
        self.assertEqual(ops.forward_op("sigmoid", Tensor(0.0)).item(), 0.5)

    def test_relu_definition(self):
        """ReLU is zero at and below zero and the identity above."""
        out = ops.forward_op("relu", Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.values, [0.0, 0.0, 2.0])

    def test_row_broadcast_add(self):
        """A vector is added to every row of a matrix."""
        out = ops.add(Tensor(np.zeros((3, 2))), Tensor([1.0, 2.0]))
        np.testing.assert_array_equal(out.values, [[1.0, 2.0]] * 3)

    def test_unknown_op_is_rejected(self):
        """Op names outside the registry raise instead of guessing."""
        with self.assertRaises(ValueError):
            ops.forward_op("conv", Tensor(1.0))

    def test_shape_error_names_op_and_shapes(self):
        """A column against a matrix is not a supported broadcast."""
        with self.assertRaises(ShapeError) as ctx:
            ops.add(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 1))))
        self.assertIn("add", str(ctx.exception))
        self.assertIn("(3, 2)", str(ctx.exception))
        self.assertIn("(3, 1)", str(ctx.exception))

    def test_matmul_contraction_mismatch(self):
        with self.assertRaises(ShapeError) as ctx:
            ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        self.assertIn("matmul", str(ctx.exception))

    def test_log_of_non_positive_input(self):
        """Log of zero is a domain error, not -inf."""
        with self.assertRaises(DomainError):
            ops.log(Tensor([1.0, 0.0]))

    def test_unfold_windows(self):
        """Window 3, stride 2 over five samples gives two overlapping windows."""
        out = ops.unfold(Tensor([1.0, 3.0, 2.0, 5.0, 4.0]), 3, 2)
        np.testing.assert_array_equal(out.values, [[1.0, 3.0, 2.0], [2.0, 5.0, 4.0]])

    def test_pad_adds_zeros_on_last_axis(self):
        out = ops.pad(Tensor([[1.0, 2.0]]), 1, 2)
        np.testing.assert_array_equal(out.values, [[0.0, 1.0, 2.0, 0.0, 0.0]])


class BackwardTestCase(SimpleTestCase):
    """Reverse-mode accumulation through small hand-checked graphs."""

    def test_sum_of_squares(self):
        """d/dx sum(x^2) = 2x."""
        # 1. ARRANGE
        x = Tensor([1.0, 2.0], requires_grad=True)

        # 2. ACT
        backward(ops.reduce_sum(ops.square(x)))

        # 3. ASSERT
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_sigmoid_slope_at_zero(self):
        """The sigmoid slope at zero is exactly 1/4."""
        w = Tensor(0.0, requires_grad=True)
        backward(ops.mul(ops.sigmoid(w), 1.0))
        self.assertEqual(float(w.grad), 0.25)

    def test_non_scalar_root_is_rejected(self):
        """Backward needs a scalar root."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(GradientError):
            backward(ops.square(x))

    def test_reuse_accumulates(self):
        """A parameter used twice receives the sum of both contributions."""
        x = Tensor(3.0, requires_grad=True)
        backward(ops.add(ops.mul(x, x), x))
        self.assertEqual(float(x.grad), 7.0)

    def test_linearity(self):
        """The gradient of a*f + b*g is a*grad f + b*grad g."""
        # 1. ARRANGE
        rng = np.random.default_rng(7)
        values = rng.uniform(-1, 1, size=(4, 3))
        a, b = 0.7, -1.3
        x = Tensor(values, requires_grad=True)

        # 2. ACT
        f = ops.reduce_sum(ops.square(x))
        g = ops.reduce_sum(ops.exp(x))
        backward(ops.add(ops.scale(f, a), ops.scale(g, b)))

        # 3. ASSERT
        np.testing.assert_allclose(x.grad, a * 2.0 * values + b * np.exp(values), rtol=0, atol=1e-12)

    def test_two_passes_double_the_gradient(self):
        """Gradients accumulate across passes until they are zeroed."""
        # 1. ARRANGE
        rng = np.random.default_rng(3)
        x = _param(rng, (3, 2))
        w = Tensor(rng.uniform(-1, 1, size=(2, 4)))

        # 2. ACT
        backward(ops.reduce_sum(ops.tanh(ops.matmul(x, w))))
        single = x.grad.copy()
        backward(ops.reduce_sum(ops.tanh(ops.matmul(x, w))))

        # 3. ASSERT
        np.testing.assert_array_equal(x.grad, 2.0 * single)

    def test_zero_grads_after_backward(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        backward(ops.reduce_sum(ops.square(x)))
        zero_grads([x])
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_zero_grads_on_fresh_params_is_noop(self):
        """Zeroing before any backward pass leaves grad unset."""
        x = Tensor([1.0, -2.0], requires_grad=True)
        zero_grads([x])
        self.assertIsNone(x.grad)

    def test_no_grad_records_nothing(self):
        """Ops under no_grad build no graph edges."""
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = ops.square(x)
        self.assertFalse(y.requires_grad)
        self.assertEqual(y.parents, ())

    def test_graph_is_topologically_ordered(self):
        """Every node comes after all of its parents in the traced order."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        root = ops.reduce_sum(ops.exp(ops.square(x)))
        graph = Graph.trace(root)
        position = {node.node_id: i for i, node in enumerate(graph.nodes)}
        for node in graph.nodes:
            for parent in node.parents:
                self.assertLess(position[parent.node_id], position[node.node_id])
        self.assertEqual(len(graph), 4)

    def test_determinism(self):
        """Two identical runs give bit-identical loss and gradients."""

        def run():
            rng = np.random.default_rng(11)
            x = _param(rng, (2, 3))
            w = _param(rng, (3, 2))
            root = ops.reduce_mean(ops.sigmoid(ops.matmul(x, w)))
            backward(root)
            return root.item(), x.grad.copy()

        first, second = run(), run()
        self.assertEqual(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])


class GradientCheckTestCase(SimpleTestCase):
    """Every differentiable op against central finite differences."""

    def setUp(self):
        self.rng = np.random.default_rng(2024)

    def _check(self, build, *tensors):
        weights = None

        def fn():
            nonlocal weights
            out = build(*tensors)
            if weights is None:
                weights = Tensor(self.rng.uniform(-1, 1, size=out.shape))
            return ops.reduce_sum(ops.mul(out, weights))

        result = gradient_check(fn, list(tensors))
        self.assertTrue(result.passed, f"max rel error {result.max_rel_error:.3g}")
        self.assertGreater(result.checked, 0)

    def test_binary_ops(self):
        """Elementwise ops with matching, row-broadcast and scalar operands."""
        for op in (ops.add, ops.sub, ops.mul):
            with self.subTest(op=op.__name__):
                self._check(op, _param(self.rng, (3, 4)), _param(self.rng, (3, 4)))
                self._check(op, _param(self.rng, (2, 3, 4)), _param(self.rng, (4,)))
                self._check(op, _param(self.rng, (3, 2)), _param(self.rng, ()))

    def test_matmul(self):
        self._check(ops.matmul, _param(self.rng, (3, 5)), _param(self.rng, (5, 2)))

    def test_concat(self):
        self._check(lambda a, b: ops.concat([a, b], axis=1), _param(self.rng, (2, 3)), _param(self.rng, (2, 4)))

    def test_select(self):
        self._check(lambda x: ops.select(x, (slice(None), 2)), _param(self.rng, (3, 4)))

    def test_reductions(self):
        """Sum, mean and max along each axis and over everything."""
        x = _param(self.rng, (3, 4))
        self._check(lambda t: ops.reduce_sum(t, axis=0), x)
        self._check(lambda t: ops.reduce_sum(t, axis=1, keepdims=True), x)
        self._check(lambda t: ops.reduce_mean(t, axis=1), x)
        self._check(lambda t: ops.reduce_max(t, axis=-1), x)
        self._check(ops.reduce_max, x)

    def test_unary_ops(self):
        """Kinked ops are checked away from zero; log on a positive range."""
        for op in (ops.exp, ops.tanh, ops.sigmoid, ops.square):
            with self.subTest(op=op.__name__):
                self._check(op, _param(self.rng, (3, 4)))
        for op in (ops.relu, ops.absolute):
            with self.subTest(op=op.__name__):
                self._check(op, _away_from_zero(self.rng, (3, 4)))
        self._check(ops.log, _param(self.rng, (3, 4), low=0.2, high=2.0))

    def test_clip(self):
        self._check(lambda x: ops.clip(x, -0.5, 0.5), _away_from_zero(self.rng, (5, 3)))

    def test_shape_ops(self):
        """Scale, reshape, transpose and pad route gradients back unchanged."""
        x = _param(self.rng, (2, 3, 4))
        self._check(lambda t: ops.scale(t, -2.5), x)
        self._check(lambda t: ops.reshape(t, (6, 4)), x)
        self._check(lambda t: ops.transpose(t, (0, 2, 1)), x)
        self._check(lambda t: ops.pad(t, 2, 1), x)

    def test_unfold(self):
        """Overlapping, adjacent and gapped windows all scatter gradients back correctly."""
        x = _param(self.rng, (2, 3, 9))
        self._check(lambda t: ops.unfold(t, 3, 1), x)
        self._check(lambda t: ops.unfold(t, 3, 2), x)
        self._check(lambda t: ops.unfold(t, 5, 4), x)
