import numpy as np
import pytest

from hfcn.tensor import (NonFiniteError, ParamStore, TapeError, Tensor, add, backward, grad_check, mul,
                         scale, sum_all, tensor_new, tensor_rand_init)

from conftest import leaf, numeric_grad, rel_err


def test_tensor_new_fills():
    assert np.array_equal(tensor_new((1, 1, 2, 2), 0).data, np.zeros((1, 1, 2, 2)))
    assert tensor_new((1, 2, 1, 1), 1.5).data.ravel().tolist() == [1.5, 1.5]
    empty = tensor_new((0, 3, 4, 4), 7)
    assert empty.shape == (0, 3, 4, 4) and empty.data.size == 0


def test_tensor_new_rejects_negative_and_huge():
    with pytest.raises(ValueError):
        tensor_new((1, -1, 2, 2))
    with pytest.raises(MemoryError):
        tensor_new((2**31, 2**31, 2**31, 1))


def test_rand_init_deterministic_and_bounded():
    a = tensor_rand_init((4, 3, 3, 3), 27, seed=5)
    b = tensor_rand_init((4, 3, 3, 3), 27, seed=5)
    assert a.data.tobytes() == b.data.tobytes()
    assert not np.array_equal(a.data, tensor_rand_init((4, 3, 3, 3), 27, seed=6).data)
    assert np.abs(tensor_rand_init((1000,), 6, seed=0).data).max() <= 1.0


def test_rand_init_mean_statistics():
    n = 10**5
    x = tensor_rand_init((n,), 6, seed=42).data
    sigma = 1.0 / np.sqrt(3.0)  # std of U(-1, 1)
    assert abs(x.mean()) <= 3 * sigma / np.sqrt(n)
    assert abs(x.std() - sigma) < 0.01


def test_rand_init_rejects_bad_fan_in():
    with pytest.raises(ValueError):
        tensor_rand_init((2,), 0, seed=0)


def test_backward_sum_gives_ones(rng):
    p = leaf(rng.normal(size=(2, 3, 4, 5)))
    backward(sum_all(p))
    assert np.array_equal(p.grad, np.ones(p.shape))


def test_backward_half_square_norm(rng):
    p = leaf(rng.normal(size=(1, 2, 3, 3)))
    backward(scale(sum_all(mul(p, p)), 0.5))
    np.testing.assert_allclose(p.grad, p.data, rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_three_op_chain_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = leaf(rng.normal(size=(1, 2, 3, 3)))
    b = leaf(rng.normal(size=(1, 2, 3, 3)))

    def f():
        return sum_all(mul(add(a, b), scale(a, 1.7)))

    backward(f())
    for t in (a, b):
        num = numeric_grad(lambda: f().data.item(), t.data)
        assert rel_err(t.grad, num) <= 1e-6


def test_shared_input_accumulates(rng):
    x = rng.normal(size=(1, 1, 3, 3))
    # two consumers in one graph
    p = leaf(x)
    backward(add(sum_all(mul(p, p)), sum_all(scale(p, 3.0))))
    both = p.grad.copy()
    # each consumer alone
    p1 = leaf(x)
    backward(sum_all(mul(p1, p1)))
    p2 = leaf(x)
    backward(sum_all(scale(p2, 3.0)))
    np.testing.assert_allclose(both, p1.grad + p2.grad, rtol=1e-15)


def test_backward_requires_scalar_root():
    p = leaf(np.ones((1, 1, 2, 2)))
    with pytest.raises(TapeError):
        backward(scale(p, 2.0))


def test_double_backward_rejected():
    p = leaf(np.ones((1, 1, 2, 2)))
    root = sum_all(p)
    backward(root)
    with pytest.raises(TapeError, match="consumed"):
        backward(root)


def test_non_finite_names_operation():
    p = leaf(np.full((1, 1, 1, 1), 1e308))
    with pytest.raises(NonFiniteError, match="scale"), np.errstate(over="ignore"):
        scale(p, 10.0)


def test_add_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(1, 2, 2, 2\).*\(1, 3, 2, 2\)"):
        add(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 3, 2, 2))))


def test_param_store_order_and_uniqueness():
    store = ParamStore()
    for name in ["b", "a", "c"]:
        store.add(name, tensor_new((1,), 0))
    assert store.names() == ["b", "a", "c"]
    with pytest.raises(KeyError):
        store.add("a", tensor_new((1,), 0))


def _linear_store(rng):
    store = ParamStore()
    store.add("p", Tensor(rng.normal(size=(1, 2, 3, 3))))
    return store


def test_grad_check_linear_is_exact(rng):
    store = _linear_store(rng)
    report = grad_check(lambda ps: sum_all(ps["p"]), store, h=1e-5, tol=1e-10)
    assert report.passed and report.worst <= 1e-10


def test_grad_check_zero_tolerance_fails_cleanly(rng):
    store = _linear_store(rng)
    report = grad_check(lambda ps: sum_all(mul(ps["p"], ps["p"])), store, h=1e-5, tol=0.0)
    assert not report.passed
    assert "FAIL" in report.format()


def test_grad_check_subsamples_large_parameters(rng):
    store = ParamStore()
    store.add("big", Tensor(rng.normal(size=(1, 4, 8, 8))))
    report = grad_check(lambda ps: sum_all(mul(ps["big"], ps["big"])), store, max_per_param=64)
    assert report.checked["big"] == 64 and report.passed


def test_grad_check_non_finite_loss():
    store = ParamStore()
    store.add("p", Tensor(np.ones((1, 1, 1, 1))))
    with pytest.raises(NonFiniteError):
        grad_check(lambda ps: Tensor(np.full((1, 1, 1, 1), np.nan), requires_grad=True), store)
