import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfcn.model import ForwardBundle
from hfcn.objective import LAMBDA_GROUPS, composite_loss, one_hot, soft_cost, soft_weights, validate_lambdas
from hfcn.tensor import Tensor, backward

from conftest import numeric_grad, rel_err


def brute_force_weights(labels, num_classes, ignore=None):
    """Pixel-by-pixel evaluation of the weight rule from a class histogram."""
    out = np.zeros(labels.shape)
    for k in range(labels.shape[0]):
        hist = {}
        for v in labels[k].ravel():
            v = int(v)
            if v != ignore:
                hist[v] = hist.get(v, 0) + 1
        total = sum(hist.values())
        for i in range(labels.shape[1]):
            for j in range(labels.shape[2]):
                v = int(labels[k, i, j])
                if v == ignore:
                    out[k, i, j] = 0.0
                elif v == 0:
                    out[k, i, j] = 1.0
                else:
                    out[k, i, j] = max(total / hist[v], 2.0)
    return out


def test_weights_ten_percent_target():
    labels = np.zeros((1, 10, 10), dtype=int)
    labels[0, :1, :] = 1
    w = soft_weights(labels, 2)
    assert np.all(w[labels == 1] == 10.0) and np.all(w[labels == 0] == 1.0)


def test_weights_all_background():
    assert np.all(soft_weights(np.zeros((2, 8, 8), dtype=int), 4) == 1.0)


def test_weights_floor_binds():
    labels = np.zeros((1, 10, 10), dtype=int)
    labels[0, :6, :] = 2
    w = soft_weights(labels, 3)
    assert np.all(w[labels == 2] == 2.0) and np.all(w[labels == 0] == 1.0)


def test_weights_are_per_image():
    labels = np.zeros((2, 10, 10), dtype=int)
    labels[0, 0, :] = 1   # 10 px -> 10
    labels[1, :2, :] = 1  # 20 px -> 5
    w = soft_weights(labels, 2)
    assert w[0][labels[0] == 1][0] == 10.0 and w[1][labels[1] == 1][0] == 5.0


def test_weights_ignore_index():
    labels = np.zeros((1, 10, 10), dtype=int)
    labels[0, 0, :5] = 1
    labels[0, 9, :] = 255
    w = soft_weights(labels, 2, ignore_index=255)
    assert np.all(w[labels == 255] == 0.0)
    assert np.all(w[labels == 1] == 90 / 5)


@pytest.mark.parametrize("seed", range(5))
def test_weights_equal_brute_force(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=(2, 16, 16))
    labels[rng.random(labels.shape) < 0.7] = 0
    assert np.array_equal(soft_weights(labels, 4), brute_force_weights(labels, 4))
    labels[0, :3] = 255
    assert np.array_equal(soft_weights(labels, 4, 255), brute_force_weights(labels, 4, 255))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_weight_floor_property(seed, c):
    labels = np.random.default_rng(seed).integers(0, c, size=(1, 8, 8))
    w = soft_weights(labels, c)
    assert np.all(w[labels == 0] == 1.0)
    assert np.all(w[labels > 0] >= 2.0)


def test_one_hot_ignores():
    y = one_hot(np.array([[[0, 2, 9]]]), 3, ignore_index=9)
    assert y[0, :, 0, 2].tolist() == [0, 0, 0]
    assert y[0, :, 0, 1].tolist() == [0, 0, 1]


def test_cost_zero_for_perfect_fit():
    labels = np.random.default_rng(0).integers(0, 3, size=(2, 4, 4))
    pred = Tensor(one_hot(labels, 3))
    assert soft_cost(pred, labels, soft_weights(labels, 3)).data.item() == 0.0


def test_cost_single_pixel_hand_value():
    pred = Tensor(np.array([1.0, 0.0]).reshape(1, 2, 1, 1))
    assert soft_cost(pred, np.array([[[1]]]), np.array([[[2.0]]])).data.item() == 2.0


def test_cost_linear_in_weights():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 3, size=(2, 4, 4))
    pred = Tensor(rng.normal(size=(2, 3, 4, 4)))
    w = soft_weights(labels, 3)
    assert soft_cost(pred, labels, 2 * w).data.item() == pytest.approx(2 * soft_cost(pred, labels, w).data.item(),
                                                                       rel=1e-15)


def test_cost_shape_mismatch():
    with pytest.raises(ValueError):
        soft_cost(Tensor(np.zeros((1, 2, 4, 4))), np.zeros((1, 4, 5), int), np.ones((1, 4, 5)))


def test_cost_gradient():
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 3, size=(2, 3, 3))
    w = soft_weights(labels, 3)
    pred = Tensor(rng.normal(size=(2, 3, 3, 3)), requires_grad=True)
    backward(soft_cost(pred, labels, w))
    num = numeric_grad(lambda: soft_cost(Tensor(pred.data), labels, w).data.item(), pred.data)
    assert rel_err(pred.grad, num) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cost_nonnegative_and_zero_only_at_fit(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=(1, 4, 4))
    w = soft_weights(labels, 3)
    y = one_hot(labels, 3)
    assert soft_cost(Tensor(y), labels, w).data.item() == 0.0
    perturbed = y.copy()
    perturbed[0, rng.integers(3), rng.integers(4), rng.integers(4)] += 0.5
    assert soft_cost(Tensor(perturbed), labels, w).data.item() > 0.0


def _bundle(rng, n=1, c=3, s=4):
    return ForwardBundle([Tensor(rng.random((n, c, s, s))) for _ in range(5)], Tensor(rng.normal(size=(n, c, s, s))))


def test_composite_model1_is_final_loss_bitwise():
    rng = np.random.default_rng(3)
    br = composite_loss(_bundle(rng), rng.integers(0, 3, size=(1, 4, 4)), LAMBDA_GROUPS["model1"])
    assert br.composite == br.final


def test_composite_hand_value_model7():
    # L_fo = 2, L_po = (1, 1, 4, 4, 4): pre-outputs chosen to produce these costs
    def const_pred(cost):
        # single pixel, class 0 target, weight 1 -> cost = 0.5 * d**2
        return Tensor(np.array([1.0 - np.sqrt(2 * cost), 0.0]).reshape(1, 2, 1, 1))

    labels = np.zeros((1, 1, 1), int)
    bundle = ForwardBundle([const_pred(v) for v in (1, 1, 4, 4, 4)], const_pred(2))
    br = composite_loss(bundle, labels, LAMBDA_GROUPS["model7"])
    assert br.final == pytest.approx(2.0) and br.pre_outputs == pytest.approx((1, 1, 4, 4, 4))
    assert br.composite == pytest.approx(3.0, rel=1e-15)


def test_composite_model2_sums_everything():
    rng = np.random.default_rng(4)
    br = composite_loss(_bundle(rng), rng.integers(0, 3, size=(1, 4, 4)), LAMBDA_GROUPS["model2"])
    assert br.composite == pytest.approx(br.final + sum(br.pre_outputs), rel=1e-15)


@pytest.mark.parametrize("i", range(5))
def test_composite_affine_in_each_lambda(i):
    rng = np.random.default_rng(10 + i)
    bundle, labels = _bundle(rng), rng.integers(0, 3, size=(1, 4, 4))
    base = [0.3, 0.2, 0.1, 0.4, 0.25]

    def at(v):
        lam = list(base)
        lam[i] = v
        return composite_loss(bundle, labels, lam)

    f0, f1, fm = at(0.0), at(1.0), at(0.5)
    slope = f0.pre_outputs[i]
    assert f1.composite - f0.composite == pytest.approx(slope, rel=1e-12)
    assert fm.composite == pytest.approx((f0.composite + f1.composite) / 2, rel=1e-14)


def test_lambda_validation():
    with pytest.raises(ValueError):
        validate_lambdas([1, 1, 1, 1, 1, 1])
    with pytest.raises(ValueError):
        validate_lambdas([1.5, 0, 0, 0, 0])
    assert sum(LAMBDA_GROUPS["model7"]) == 1.0
