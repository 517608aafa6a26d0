"""
Tests for the differentiation engine: Tensor, Tape, primitives and the
finite-difference gradient oracle
"""
import numpy as np
import pytest
from scipy.special import logsumexp as scipy_logsumexp

from src.engine import CHECK_DTYPE, Tape, Tensor, grad_check
from src.engine import ops
from src.exceptions import (
    DegenerateVectorError,
    DimensionError,
    DomainError,
    EmptySliceError,
    RankError,
    TapeError,
    VocabularyError,
)
from src.services.verification import OP_TOLERANCE, GradCheckSuite

PRIMITIVE_CHECKS = sorted(GradCheckSuite().primitive_checks())


def _leaf(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=CHECK_DTYPE), requires_grad=True)


class TestTape:
    """Recording and reverse accumulation"""

    def test_broadcast_gradient_is_summed_back(self):
        """Gradients of a broadcast operand are reduced to its own shape"""
        a = _leaf(np.ones((2, 3)))
        b = _leaf([1.0, 2.0, 3.0])
        with Tape() as tape:
            loss = ops.sum(a + b)
        tape.backward(loss)
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_shared_input_accumulates(self):
        """A tensor used twice receives the sum of both contributions"""
        x = _leaf([1.5, -2.0])
        with Tape() as tape:
            loss = ops.sum(x * x)
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [3.0, -4.0])

    def test_backward_accumulates_into_existing_grad(self):
        """A second backward pass adds onto the stored gradient"""
        x = _leaf([1.0, 2.0])
        with Tape() as tape:
            loss = ops.sum(x * 3.0)
        tape.backward(loss)
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [6.0, 6.0])

    def test_unused_leaf_gets_zero_gradient(self):
        """Leaves on the tape that the loss ignores get zeros, not None"""
        x = _leaf([1.0, 2.0])
        w = _leaf([3.0])
        with Tape() as tape:
            _ = x * 2.0
            loss = ops.sum(w * 4.0)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])
        np.testing.assert_array_equal(w.grad, [4.0])

    def test_no_tape_records_nothing(self):
        """Ops run outside a tape produce constants"""
        x = _leaf([1.0, 2.0])
        out = ops.sigmoid(x)
        assert out.requires_grad is False
        tape = Tape()
        with tape:
            pass
        assert len(tape) == 0

    def test_non_scalar_loss_rejected(self):
        """backward needs a single-element loss"""
        x = _leaf([1.0, 2.0])
        with Tape() as tape:
            out = x * 2.0
        with pytest.raises(RankError):
            tape.backward(out)

    def test_foreign_loss_rejected(self):
        """A loss recorded on another tape cannot be differentiated here"""
        x = _leaf([1.0, 2.0])
        with Tape():
            loss = ops.sum(x * 2.0)
        with Tape() as other:
            ops.sum(x * 3.0)
        with pytest.raises(TapeError):
            other.backward(loss)

    def test_tensor_sugar(self):
        """Operator overloads route to the primitives"""
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = Tensor(np.array([[0.5], [1.0]]))
        np.testing.assert_allclose((a @ b).data, [[2.5], [5.5]])
        np.testing.assert_allclose((a - 1.0).data, [[0.0, 1.0], [2.0, 3.0]])
        np.testing.assert_allclose((a / 2.0).data, a.data / 2.0)
        np.testing.assert_allclose((-a).T.data, -a.data.T)
        assert a[1, 0].item() == 3.0
        assert a.reshape(4).shape == (4,)
        assert a.mean().item() == pytest.approx(2.5)


class TestPrimitives:
    """Forward values and error contracts"""

    def test_l2_normalize_known_value(self):
        """[3, 4] normalises to [0.6, 0.8]"""
        out = ops.l2_normalize(Tensor(np.array([3.0, 4.0])), axis=-1)
        np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-6)

    def test_l2_normalize_zero_vector(self):
        """A zero slice has no direction"""
        with pytest.raises(DegenerateVectorError):
            ops.l2_normalize(Tensor(np.zeros((2, 3))), axis=-1)

    def test_softmax_mask(self):
        """Masked positions get exactly zero weight and the rest sum to one"""
        mask = np.array([True, False, True])
        out = ops.softmax(Tensor(np.array([1.0, 50.0, 1.0])), axis=0, mask=mask)
        np.testing.assert_allclose(out.data, [0.5, 0.0, 0.5])

    def test_softmax_fully_masked_slice(self):
        """A slice without valid positions is an error"""
        with pytest.raises(EmptySliceError):
            ops.softmax(Tensor(np.ones((2, 2))), axis=1, mask=np.array([[True, True], [False, False]]))

    def test_logsumexp_matches_scipy(self, rng):
        """Shifted evaluation agrees with scipy, also for large inputs"""
        values = rng.normal(0.0, 30.0, (3, 5))
        out = ops.logsumexp(Tensor(values, dtype=CHECK_DTYPE), axis=1)
        np.testing.assert_allclose(out.data, scipy_logsumexp(values, axis=1), rtol=1e-10)

    def test_log_domain(self):
        """Logarithm of a non-positive value is rejected"""
        with pytest.raises(DomainError):
            ops.log(Tensor(np.array([1.0, 0.0])))

    def test_leaky_relu(self):
        """Negative inputs are scaled by the slope"""
        out = ops.leaky_relu(Tensor(np.array([-2.0, 0.0, 3.0])), 0.1)
        np.testing.assert_allclose(out.data, [-0.2, 0.0, 3.0])

    def test_matmul_shape_error(self):
        """Inner dimensions must agree"""
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_shape_error(self):
        """Non-broadcastable operands are a dimension error"""
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_conv2d_matches_direct_loop(self, rng):
        """3x3 same-padded cross-correlation equals the textbook sum"""
        x = rng.normal(size=(2, 5, 4))
        kernel = rng.normal(size=(3, 2, 3, 3))
        bias = rng.normal(size=3)
        out = ops.conv2d(Tensor(x, dtype=CHECK_DTYPE), Tensor(kernel, dtype=CHECK_DTYPE),
                         Tensor(bias, dtype=CHECK_DTYPE)).data

        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        expected = np.zeros((3, 5, 4))
        for o in range(3):
            for r in range(5):
                for c in range(4):
                    expected[o, r, c] = np.sum(padded[:, r:r + 3, c:c + 3] * kernel[o]) + bias[o]
        np.testing.assert_allclose(out, expected, rtol=1e-10, atol=1e-12)

    def test_conv2d_stride_two_shape(self):
        """Stride 2 halves each spatial extent, rounding up"""
        out = ops.conv2d(Tensor(np.ones((2, 7, 8))), Tensor(np.ones((4, 2, 3, 3))), stride=2)
        assert out.shape == (4, 4, 4)

    def test_conv2d_channel_mismatch(self):
        """Kernel input channels must match the map"""
        with pytest.raises(DimensionError):
            ops.conv2d(Tensor(np.ones((3, 4, 4))), Tensor(np.ones((2, 2, 3, 3))))

    def test_upsample_and_identity_resize(self):
        """Nearest 2x repeats pixels; a same-size bilinear resize is the identity"""
        a = np.arange(6, dtype=np.float64).reshape(2, 3)
        up = ops.upsample2x(Tensor(a)).data
        assert up.shape == (4, 6)
        np.testing.assert_array_equal(up[::2, ::2], a)
        np.testing.assert_allclose(ops.resize_bilinear(Tensor(a), 2, 3).data, a)

    def test_resize_keeps_constant_maps(self):
        """Interpolation weights sum to one"""
        out = ops.resize_bilinear(Tensor(np.full((3, 4), 2.5)), 12, 7)
        np.testing.assert_allclose(out.data, np.full((12, 7), 2.5), rtol=1e-6)

    def test_embedding_out_of_range(self):
        """Ids outside the table are a vocabulary error"""
        with pytest.raises(VocabularyError):
            ops.embedding(Tensor(np.zeros((4, 2))), np.array([0, 4]))

    def test_bce_at_zero_logits(self):
        """Zero logits cost ln 2 whatever the target"""
        target = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = ops.bce_with_logits(Tensor(np.zeros((2, 2)), dtype=CHECK_DTYPE), target)
        assert out.item() == pytest.approx(np.log(2.0), abs=1e-6)

    def test_elementwise_dispatch(self):
        """Primitives can be selected by name"""
        x = Tensor(np.array([0.0, 1.0]))
        np.testing.assert_allclose(ops.elementwise("sigmoid", x).data, [0.5, 1.0 / (1.0 + np.exp(-1.0))], rtol=1e-6)
        with pytest.raises(ValueError):
            ops.elementwise("cosh", x)


class TestGradCheck:
    """The finite-difference oracle itself"""

    @pytest.mark.gradcheck
    @pytest.mark.parametrize("name", PRIMITIVE_CHECKS)
    def test_primitive_backward_rules(self, name):
        """Every primitive's backward agrees with central differences"""
        error = GradCheckSuite(seed=0).primitive_checks()[name]()
        assert error < OP_TOLERANCE

    def test_corrupted_rule_is_detected(self, monkeypatch):
        """A wrong backward rule produces a large relative error"""
        monkeypatch.setattr(ops.Sigmoid, "backward", lambda self, grad: (grad * self.out,))
        error = grad_check(lambda t: ops.sum(ops.sigmoid(t)), Tensor(np.array([0.3, -1.2, 2.0])))
        assert error > 0.1

    def test_eps_range(self):
        """Step sizes outside [1e-6, 1e-3] are rejected"""
        with pytest.raises(ValueError):
            grad_check(lambda t: ops.sum(t), Tensor(np.ones(3)), eps=1e-2)

    def test_coordinate_sampling(self):
        """Checking a subset of coordinates still passes for a correct rule"""
        x = Tensor(np.linspace(-1.0, 1.0, 50))
        error = grad_check(lambda t: ops.sum(ops.tanh(t) * t), x, max_coords=5, rng=np.random.default_rng(3))
        assert error < OP_TOLERANCE
