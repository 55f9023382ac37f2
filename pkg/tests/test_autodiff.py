"""
Autodiff engine tests

Covers:
1. Forward values of the primitive operations
2. Backward pass (accumulation across shared subgraphs, row scatter)
3. Finite-difference checking
4. Error handling (shape mismatch, index range, non-finite loss)
"""

import math

import pytest
from pathlib import Path

# Add parent directory to path for imports
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np

import core.autodiff as ad
from core.autodiff import Parameter
from core.errors import IndexRangeError, NonFiniteError, ShapeError
from core.verify import check_operation_gradients


class TestForward:
    """Test forward values"""

    def test_affine_identity(self):
        """Test that W=I, b=0 maps x to itself"""
        x = ad.const([1.0, 2.0])
        y = ad.affine(ad.const(np.eye(2)), x, ad.const([0.0, 0.0]))

        assert np.array_equal(y.data, [1.0, 2.0])

    def test_affine_zero_weights(self):
        """Test that W=0, b=[3,4] ignores x"""
        y = ad.affine(ad.const(np.zeros((2, 2))), ad.const([7.0, -1.0]), ad.const([3.0, 4.0]))

        assert np.array_equal(y.data, [3.0, 4.0])

    def test_gather_basis_rows(self):
        """Test that gathering row 1 of I_3 gives e_2"""
        assert np.array_equal(ad.gather(ad.const(np.eye(3)), 1).data, [0.0, 1.0, 0.0])

    def test_mean_gather(self):
        """Test that the mean of rows {0, 2} of I_3 is [0.5, 0, 0.5]"""
        y = ad.mean_gather(ad.const(np.eye(3)), [0, 2])

        assert np.allclose(y.data, [0.5, 0.0, 0.5])

    def test_sigmoid_values(self):
        """Test sigmoid at 0 and at large magnitudes without overflow"""
        y = ad.sigmoid(ad.const([0.0, 800.0, -800.0]))

        assert y.data[0] == 0.5
        assert y.data[1] == pytest.approx(1.0)
        assert y.data[2] == pytest.approx(0.0)
        assert np.isfinite(y.data).all()

    def test_softmax_uniform(self):
        """Test that equal logits give equal weights"""
        y = ad.softmax(ad.const([2.0, 2.0, 2.0, 2.0]))

        assert np.allclose(y.data, 0.25)

    def test_softmax_shift_invariant(self):
        """Test that adding a constant to every logit changes nothing"""
        a = np.array([0.3, -1.2, 2.5])

        assert np.allclose(ad.softmax(ad.const(a)).data, ad.softmax(ad.const(a + 100.0)).data)

    def test_relu(self):
        """Test relu zeroes negatives and keeps positives"""
        y = ad.relu(ad.const([-2.0, 0.0, 3.0]))

        assert list(y.data) == [0.0, 0.0, 3.0]

    def test_log_sum_exp_matches_numpy(self):
        """Test log-sum-exp along rows"""
        a = np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]])
        y = ad.log_sum_exp(ad.const(a), axis=1)

        assert y.data[0] == pytest.approx(np.log(np.exp(a[0]).sum()))
        assert y.data[1] == pytest.approx(1000.0 + np.log(3.0))

    def test_l2_normalize_unit_norm(self):
        """Test that normalized vectors have unit length"""
        y = ad.l2_normalize(ad.const([3.0, 4.0]))

        assert np.allclose(y.data, [0.6, 0.8])

    def test_bce_at_half(self):
        """Test that predicting 0.5 costs ln 2 whatever the label"""
        assert ad.binary_cross_entropy(ad.const([0.5]), [1]).item() == pytest.approx(math.log(2))
        assert ad.binary_cross_entropy(ad.const([0.5]), [0]).item() == pytest.approx(math.log(2))

    def test_bce_confident_correct(self):
        """Test that y=1 with p = 1 - eps costs about eps"""
        loss = ad.binary_cross_entropy(ad.const([1.0 - ad.BCE_EPSILON]), [1]).item()

        assert 0.0 <= loss < 1e-6

    def test_bce_batch_mean(self):
        """Test that the loss is averaged over the batch"""
        p = ad.const([0.5, 0.9])
        expected = (math.log(2) - math.log(0.9)) / 2

        assert ad.binary_cross_entropy(p, [1, 1]).item() == pytest.approx(expected)


class TestDropout:
    """Test inverted dropout"""

    def test_rate_zero_is_identity(self):
        """Test that rate 0 returns the input unchanged"""
        x = ad.const(np.arange(5.0))

        assert ad.dropout(x, 0.0, train=True, rng=np.random.default_rng(0)) is x

    def test_eval_mode_is_identity(self):
        """Test that eval mode ignores the rate"""
        x = ad.const(np.arange(5.0))

        assert ad.dropout(x, 0.5, train=False) is x

    def test_expectation_preserved(self):
        """Test that the Monte Carlo mean over 10^4 masks stays within 2%"""
        rng = np.random.default_rng(0)
        x = ad.const(np.full(100, 2.0))
        means = [ad.dropout(x, 0.5, train=True, rng=rng).data.mean() for _ in range(10_000)]

        assert abs(np.mean(means) - 2.0) / 2.0 < 0.02

    def test_invalid_rate(self):
        """Test that rate >= 1 is rejected"""
        with pytest.raises(ValueError):
            ad.dropout(ad.const([1.0]), 1.0, train=True)


class TestBackward:
    """Test gradient propagation"""

    def test_shared_subgraph_accumulates(self):
        """Test that y = a*a + 3a gives dy/da = 2a + 3"""
        a = Parameter("a", np.array([1.5, -2.0]))
        y = ad.sum(ad.add(ad.mul(a, a), ad.scale(a, 3.0)))
        y.backward()

        assert np.allclose(a.grad, 2 * a.data + 3)

    def test_mean_gather_splits_gradient(self):
        """Test that each of two gathered rows receives g/2"""
        table = Parameter("t", np.eye(3))
        y = ad.sum(ad.mean_gather(table, [0, 2]))
        y.backward()

        assert np.allclose(table.grad[0], 0.5)
        assert np.allclose(table.grad[2], 0.5)
        assert np.allclose(table.grad[1], 0.0), "Rows not gathered must get no gradient"

    def test_repeated_gather_scatters(self):
        """Test that gathering the same row twice accumulates both contributions"""
        table = Parameter("t", np.ones((4, 2)))
        y = ad.sum(ad.gather_rows(table, [1, 1, 3]))
        y.backward()

        assert list(table.grad[:, 0]) == [0.0, 2.0, 0.0, 1.0]

    def test_constants_receive_no_gradient(self):
        """Test that const leaves are skipped"""
        c = ad.const([1.0, 2.0])
        p = Parameter("p", np.array([0.5, 0.5]))
        ad.sum(ad.mul(c, p)).backward()

        assert c._grad is None
        assert np.array_equal(p.grad, [1.0, 2.0])

    def test_zero_grad_resets(self):
        """Test that zero_grad clears accumulated gradient"""
        p = Parameter("p", np.array([1.0]))
        ad.sum(ad.scale(p, 2.0)).backward()
        p.zero_grad()

        assert np.array_equal(p.grad, [0.0])

    def test_count_ops(self):
        """Test that nodes created in the block are counted"""
        x = ad.const([1.0])
        with ad.count_ops() as counter:
            ad.add(x, ad.scale(x, 2.0))

        assert counter.n == 2


class TestFiniteDifference:
    """Test the finite-difference checker"""

    def test_quadratic(self):
        """Test sum(theta^2) agrees within 1e-6"""
        theta = Parameter("theta", np.random.default_rng(0).normal(size=6))

        err = ad.finite_difference_check(lambda: ad.sum(ad.mul(theta, theta)), [theta], n_coords=None)
        assert err < 1e-6, f"Relative error {err} too large"

    def test_zero_gradient_point(self):
        """Test that an all-zero symmetric point has zero error"""
        W = Parameter("W", np.zeros((2, 3)))
        b = Parameter("b", np.zeros(2))
        x = ad.const(np.zeros(3))

        def loss():
            h = ad.affine(W, x, b)
            return ad.sum(ad.mul(h, h))

        assert ad.finite_difference_check(loss, [W, b], n_coords=None) == 0.0

    def test_operation_suite(self):
        """Test every primitive against central differences"""
        result = check_operation_gradients()

        assert result.passed, result.detail

    def test_non_finite_loss(self):
        """Test that a NaN loss aborts the check"""
        p = Parameter("p", np.array([-1.0]))

        with pytest.raises(NonFiniteError):
            ad.finite_difference_check(lambda: ad.sum(ad.log(p)), [p])

    def test_parameters_restored(self):
        """Test that perturbed coordinates are put back"""
        theta = Parameter("theta", np.array([0.1, 0.2, 0.3]))
        before = theta.data.copy()
        ad.finite_difference_check(lambda: ad.sum(ad.mul(theta, theta)), [theta], n_coords=None)

        assert np.array_equal(theta.data, before)


class TestErrors:
    """Test shape and index errors"""

    def test_affine_shape_mismatch(self):
        """Test that W [2x3] with x [2] raises ShapeError"""
        with pytest.raises(ShapeError):
            ad.affine(ad.const(np.zeros((2, 3))), ad.const([1.0, 2.0]), ad.const([0.0, 0.0]))

    def test_add_shape_mismatch(self):
        """Test that elementwise ops reject broadcasting"""
        with pytest.raises(ShapeError):
            ad.add(ad.const([1.0, 2.0]), ad.const([1.0]))

    def test_gather_out_of_range(self):
        """Test that index 5 into a 3-row table raises IndexRangeError"""
        with pytest.raises(IndexRangeError):
            ad.gather(ad.const(np.eye(3)), 5)

    def test_negative_index(self):
        """Test that negative indices are rejected rather than wrapped"""
        with pytest.raises(IndexRangeError):
            ad.gather_rows(ad.const(np.eye(3)), [0, -1])

    def test_matmul_inner_mismatch(self):
        """Test that non-conforming matrices raise ShapeError"""
        with pytest.raises(ShapeError):
            ad.matmul(ad.const(np.zeros((2, 3))), ad.const(np.zeros((2, 3))))
