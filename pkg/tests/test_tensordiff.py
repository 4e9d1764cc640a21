import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3net import tensordiff as td
from c3net.errors import ContractError, NumericalError, ShapeError


def leaf(x, name=None):
    return td.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, name=name)


# --- worked examples

def test_mul_forward_and_grad():
    a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
    y = td.mul(a, b)
    assert np.array_equal(y.data, [3.0, 8.0])
    td.sum_over_axis(y).backward()
    assert np.array_equal(a.grad, [3.0, 4.0])
    assert np.array_equal(b.grad, [1.0, 2.0])


def test_exp_and_softplus_at_zero():
    assert td.exp(leaf(0.0)).item() == 1.0
    assert td.shifted_softplus(leaf(0.0)).item() == 0.0


def test_softplus_matches_closed_form():
    x = np.linspace(-30, 30, 61)
    y = td.shifted_softplus(td.Tensor(x)).data
    assert np.allclose(y, np.log(0.5 * np.exp(x) + 0.5), rtol=1e-12, atol=1e-12)


def test_grad_check_square_and_exp():
    x = leaf(3.0, "x")
    assert td.grad_check(lambda: td.square(x), [x]) < 1e-9
    z = leaf(0.0, "z")
    assert td.grad_check(lambda: td.exp(z), [z]) < 1e-8


def test_sum_over_axis_conserves_gradient_mass():
    a = leaf(np.arange(12.0).reshape(3, 4))
    td.sum_over_axis(td.sum_over_axis(a, axis=1)).backward()
    assert a.grad.sum() == a.data.size
    assert np.array_equal(a.grad, np.ones((3, 4)))


def test_shared_subexpression_accumulates():
    a = leaf([2.0])
    y = td.mul(a, a)  # a used twice
    td.sum_over_axis(td.add(y, a)).backward()
    assert a.grad[0] == 2 * 2.0 + 1.0


def test_segment_sum_and_gather_round_trip():
    a = leaf(np.arange(6.0).reshape(3, 2))
    g = td.gather_rows(a, [0, 2, 2, 1])
    s = td.segment_sum(g, [0, 1, 1, 0], 2)
    assert np.array_equal(s.data, [[0 + 2, 1 + 3], [8, 10]])
    td.sum_over_axis(s).backward()
    assert np.array_equal(a.grad, [[1, 1], [1, 1], [2, 2]])


def test_mse_value():
    p = leaf([1.0, 3.0])
    assert td.mse(p, [0.0, 1.0]).item() == pytest.approx(2.5)


# --- contracts

def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        td.add(leaf(np.ones(3)), leaf(np.ones(4)))
    with pytest.raises(ShapeError):
        td.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        td.sum_over_axis(leaf(np.ones(3)), axis=2)
    with pytest.raises(ShapeError):
        td.gather_rows(leaf(np.ones((2, 2))), [2])


def test_batch_broadcast_allowed():
    a, b = leaf(np.ones((4, 3))), leaf([1.0, 2.0, 3.0])
    td.sum_over_axis(td.mul(a, b)).backward()
    assert np.array_equal(b.grad, [4.0, 4.0, 4.0])


def test_backward_needs_scalar():
    with pytest.raises(ContractError):
        td.exp(leaf([1.0, 2.0])).backward()


def test_grad_check_rejects_single_precision_and_bad_step():
    x = td.Tensor(np.float32(1.0), requires_grad=True)
    with pytest.raises(ContractError):
        td.grad_check(lambda: td.square(x), [x])
    y = leaf(1.0)
    with pytest.raises(ContractError):
        td.grad_check(lambda: td.square(y), [y], h=1e-2)


def test_no_tape_without_grad():
    y = td.exp(td.Tensor([1.0]))
    assert not y.requires_grad and y._parents == ()


# --- randomized checks against central differences

@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_random_composite_gradients(seed):
    rng = np.random.default_rng(seed)
    W = leaf(rng.normal(size=(3, 4)), "W")
    x = leaf(rng.normal(size=(5, 3)), "x")
    b = leaf(rng.normal(size=4), "b")
    idx = rng.integers(0, 5, size=7)

    def f():
        h = td.shifted_softplus(td.add(td.matmul(x, W), b))
        h = td.segment_sum(td.gather_rows(h, idx), idx % 2, 2)
        return td.sum_over_axis(td.exp(td.scalar_mul(td.square(h), -0.1)))

    assert td.grad_check(f, {"W": W, "x": x, "b": b}) < 1e-6


@pytest.mark.parametrize("form", td.RBF_FORMS)
@pytest.mark.parametrize("shared", [True, False])
def test_rbf_conv_gradients(form, shared):
    rng = np.random.default_rng(3)
    dist = rng.uniform(1.0, 6.0, size=(4, 6))
    mu = leaf(rng.uniform(1.0, 5.0, size=3), "mu")
    sigma = leaf(rng.uniform(0.5, 1.5, size=3), "sigma")
    s = leaf(rng.normal(size=3 if shared else (6, 3)), "s")
    mask = (rng.uniform(size=dist.shape) > 0.2).astype(float)

    def f():
        return td.sum_over_axis(td.square(td.rbf_conv(dist, s, mu, sigma, form, mask)))

    assert td.grad_check(f, {"mu": mu, "sigma": sigma, "s": s}) < 1e-6


def test_rbf_shared_and_tiled_paths_agree():
    rng = np.random.default_rng(4)
    dist = rng.uniform(1.0, 6.0, size=(3, 5))
    mu, sigma, row = rng.uniform(1, 5, 4), rng.uniform(0.5, 1.5, 4), rng.normal(size=4)
    a = td.rbf_conv(dist, row, mu, sigma).data
    b = td.rbf_conv(dist, np.tile(row, (5, 1)), mu, sigma).data
    assert np.allclose(a, b, rtol=1e-13)


def test_rbf_value_at_two_sigma():
    # |d - mu| = 2 sigma gives exp(-1) in the printed form
    out = td.rbf_conv(np.array([[3.0]]), np.ones(1), np.array([1.0]), np.array([1.0]))
    assert out.item() == pytest.approx(np.exp(-1.0), rel=1e-12)


# --- Adam

def test_adam_first_step_is_lr():
    p = leaf([0.5])
    opt = td.Adam({"p": p}, lr=1e-4)
    td.adam_step(opt, {"p": np.array([1.0])})
    assert p.data[0] - 0.5 == pytest.approx(-1e-4, rel=1e-6)


def test_adam_zero_gradient_leaves_param():
    p = leaf([0.5, -2.0])
    opt = td.Adam({"p": p})
    td.adam_step(opt, {"p": np.zeros(2)})
    assert np.array_equal(p.data, [0.5, -2.0])


def test_adam_second_step_not_larger():
    p = leaf([0.0])
    opt = td.Adam({"p": p}, lr=1e-3)
    td.adam_step(opt, {"p": np.array([1.0])})
    first = -p.data[0]
    td.adam_step(opt, {"p": np.array([1.0])})
    assert -p.data[0] - first <= first * (1 + 1e-12)


def test_adam_step_scale():
    p, q = leaf([0.0]), leaf([0.0])
    opt = td.Adam({"p": p, "q": q}, lr=1e-3, step_scale={"q": 10.0})
    td.adam_step(opt, {"p": np.array([1.0]), "q": np.array([1.0])})
    assert q.data[0] == pytest.approx(10 * p.data[0], rel=1e-12)
    with pytest.raises(ShapeError):
        td.Adam({"p": p}, step_scale={"p": np.ones(3)})


def test_adam_rejects_non_finite_gradient():
    p = leaf([1.0])
    opt = td.Adam({"p": p})
    with pytest.raises(NumericalError):
        td.adam_step(opt, {"p": np.array([np.nan])})
    assert p.data[0] == 1.0
