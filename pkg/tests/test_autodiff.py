import math

import numpy as np
import pytest

from rnalab import autodiff as ad
from rnalab.autodiff import Tensor
from rnalab.errors import EmptyBatchError, LabelError, RankError, ShapeError
from rnalab.gradcheck import numerical_grad, relative_error

from gradsuite import LOSS_CASES, OP_CASES, TOL, grad_reverse_error, random_graph, worst_error


def leaf(v):
    return Tensor(np.asarray(v, dtype=float), requires_grad=True)


# ---------------------------------------------------------------- forward values


def test_matmul_examples():
    assert np.array_equal(ad.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[5], [7]])).values, [[5], [7]])
    assert ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).values.tolist() == [[11]]


def test_matmul_grad_example():
    a, b = leaf([[1, 2]]), Tensor([[3.0], [4.0]])
    ad.sum(ad.matmul(a, b)).backward()
    np.testing.assert_allclose(a.grad, [[3, 4]])
    fd = numerical_grad(lambda: ad.sum(ad.matmul(a, b)), a)
    np.testing.assert_allclose(fd, [[3, 4]], atol=1e-8)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_relu_examples():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).values.tolist() == [0, 0, 2]
    assert not ad.relu(Tensor(-np.arange(1, 5.0))).values.any()
    x = leaf([3.0, -3.0])
    ad.sum(ad.relu(x)).backward()
    assert x.grad.tolist() == [1.0, 0.0]


def test_relu_subgradient_at_zero_is_zero():
    x = leaf([0.0, 1.0])
    ad.sum(ad.relu(x)).backward()
    assert x.grad.tolist() == [0.0, 1.0]


def test_row_l2_norm_examples():
    assert ad.row_l2_norm(Tensor([[3.0, 4.0], [0.0, 0.0]])).values.tolist() == [5.0, 0.0]
    x = leaf([[3.0, 4.0]])
    ad.sum(ad.row_l2_norm(x)).backward()
    np.testing.assert_allclose(x.grad, [[0.6, 0.8]])


def test_row_l2_norm_zero_row_has_finite_zero_grad():
    x = leaf([[0.0, 0.0], [1.0, 0.0]])
    ad.sum(ad.row_l2_norm(x)).backward()
    assert np.isfinite(x.grad).all()
    assert x.grad[0].tolist() == [0.0, 0.0]


@pytest.mark.parametrize("c", [-3.0, 0.5, 7.0])
def test_row_l2_norm_homogeneous(c):
    x = np.random.default_rng(0).normal(size=(5, 4))
    np.testing.assert_allclose(ad.row_l2_norm(Tensor(c * x)).values, abs(c) * ad.row_l2_norm(Tensor(x)).values)


def test_mean_examples():
    assert ad.mean(Tensor([5.0, 0.0])).item() == 2.5
    assert ad.mean(Tensor([7.0])).item() == 7.0
    x = leaf([1.0, 2.0, 3.0, 4.0])
    ad.mean(x).backward()
    assert x.grad.tolist() == [0.25] * 4
    with pytest.raises(EmptyBatchError):
        ad.mean(Tensor(np.zeros(0)))


def test_cross_entropy_examples():
    assert math.isclose(ad.softmax_cross_entropy(Tensor([[0.0, 0.0]]), [0]).item(), math.log(2), rel_tol=1e-12)
    big = ad.softmax_cross_entropy(Tensor([[1000.0, 0.0]]), [0]).item()
    assert math.isfinite(big) and big < 1e-12
    with pytest.raises(LabelError):
        ad.softmax_cross_entropy(Tensor([[0.0, 0.0]]), [2])
    with pytest.raises(LabelError):
        ad.softmax_cross_entropy(Tensor([[0.0, 0.0]]), [-1])


@pytest.mark.parametrize("c", [-50.0, 0.3, 1e3])
def test_cross_entropy_shift_invariance(c):
    rng = np.random.default_rng(1)
    z = rng.normal(size=(6, 4))
    y = rng.integers(0, 4, size=6)
    a = ad.softmax_cross_entropy(Tensor(z), y).item()
    b = ad.softmax_cross_entropy(Tensor(z + c), y).item()
    assert abs(a - b) < 1e-9


def test_backward_examples():
    x = leaf(np.arange(6.0).reshape(2, 3))
    ad.sum(x).backward()
    assert (x.grad == 1).all()
    y = leaf([1.0, -2.0])
    ad.sum(ad.scalar_multiply(y, 3.0)).backward()
    assert y.grad.tolist() == [3.0, 3.0]


def test_backward_accumulates_until_reset():
    x = leaf([1.0, 2.0])
    ad.sum(x).backward()
    ad.sum(x).backward()
    assert x.grad.tolist() == [2.0, 2.0]
    x.zero_grad()
    ad.sum(x).backward()
    assert x.grad.tolist() == [1.0, 1.0]


def test_backward_shared_subexpression_counts_each_path():
    x = leaf([2.0])
    y = ad.multiply(x, x)  # both parents are the same leaf
    ad.sum(ad.add(y, x)).backward()
    assert x.grad.tolist() == [5.0]


def test_backward_non_scalar_root():
    with pytest.raises(RankError):
        leaf([1.0, 2.0]).backward()


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        ad.concat_rows([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4)))])


def test_scalar_tensors_stay_zero_dimensional():
    assert Tensor(2.0).shape == ()
    assert ad.sum(Tensor(np.ones(3))).shape == ()


def test_divide_guards_tiny_denominators():
    a, b = leaf([1.0, 1.0]), leaf([0.0, 2.0])
    out = ad.divide(a, b)
    assert np.isfinite(out.values).all()
    ad.sum(out).backward()
    assert np.isfinite(a.grad).all() and np.isfinite(b.grad).all()
    assert b.grad[0] == 0.0


def test_grad_reverse_forward_identity():
    x = Tensor([1.0, -2.0])
    assert ad.grad_reverse(x, 0.7).values.tolist() == [1.0, -2.0]


# ---------------------------------------------------------------- oracle checks


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name):
    assert worst_error(OP_CASES[name], np.random.default_rng(7)) < TOL


@pytest.mark.parametrize("name", sorted(LOSS_CASES))
def test_loss_gradients_match_finite_differences(name):
    assert worst_error(LOSS_CASES[name], np.random.default_rng(11)) < TOL


def test_grad_reverse_scales_gradient_by_minus_weight():
    rng = np.random.default_rng(3)
    assert max(grad_reverse_error(rng) for _ in range(20)) < TOL


def test_random_composite_graphs():
    assert worst_error(random_graph, np.random.default_rng(2024), instances=20) < TOL


def test_relative_error_oracle():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert math.isclose(relative_error(np.array([1.0, 0.0]), np.array([0.0, 0.0])), 1.0)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_determinism_bitwise():
    def run():
        fn, leaves = random_graph(np.random.default_rng(5))
        out = fn()
        out.backward()
        return out.values.tobytes(), [l.grad.tobytes() for l in leaves]

    assert run() == run()
