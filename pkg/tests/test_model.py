import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from verfedsv.data import ClientData, DimensionError, VerticalDataset
from verfedsv.model import (
    BinaryLogistic,
    LocalModel,
    MultinomialLogistic,
    accuracy,
    embed,
    get_loss,
    grad_h,
    lipschitz_G,
    log_prior_offset,
    loss_value,
    mean_loss,
    predict,
)

logits = arrays(np.float64, st.integers(2, 6), elements=st.floats(-50, 50))


def test_embed_zero_model():
    np.testing.assert_array_equal(embed(LocalModel.zeros(3, 4), np.ones(4)), np.zeros(3))


def test_embed_hand_inner_product():
    assert embed(LocalModel(np.array([[1.0, 2.0]])), np.array([3.0, 4.0])).tolist() == [11.0]


def test_embed_matches_loop_oracle(rng):
    theta = rng.normal(size=(3, 7))
    x = rng.normal(size=7)
    oracle = [sum(theta[c, j] * x[j] for j in range(7)) for c in range(3)]
    np.testing.assert_allclose(embed(LocalModel(theta), x), oracle, atol=1e-12, rtol=0)


def test_embed_dimension_mismatch():
    with pytest.raises(DimensionError):
        embed(LocalModel.zeros(2, 3), np.ones(4))


def test_loss_uniform_logits():
    assert loss_value(np.zeros(2), 0) == pytest.approx(math.log(2), abs=1e-15)


def _lse_oracle(h, y) -> float:
    with mpmath.workdps(50):
        return float(mpmath.log(sum(mpmath.exp(mpmath.mpf(v)) for v in h)) - mpmath.mpf(h[y]))


def test_loss_large_logit_is_stable():
    oracle = _lse_oracle([1000.0, 0.0], 0)
    assert loss_value(np.array([1000.0, 0.0]), 0) == pytest.approx(oracle, abs=1e-300)
    assert loss_value(np.array([1000.0, 0.0]), 1) == pytest.approx(1000.0)


def test_binary_margin_symmetric_point():
    assert loss_value(np.zeros(1), 0, BinaryLogistic()) == pytest.approx(math.log(2))
    assert loss_value(np.zeros(1), 1, BinaryLogistic()) == pytest.approx(math.log(2))


def test_loss_label_out_of_range():
    with pytest.raises(ValueError):
        loss_value(np.zeros(2), 2)
    with pytest.raises(ValueError):
        grad_h(np.zeros(2), -1)


def test_grad_uniform():
    np.testing.assert_allclose(grad_h(np.zeros(2), 0), [-0.5, 0.5])


@given(logits, st.data())
def test_grad_sums_to_zero(h, data):
    y = data.draw(st.integers(0, h.size - 1))
    assert abs(grad_h(h, y).sum()) <= 1e-12


def _fd(h, y, loss, step=1e-6):
    out = np.empty_like(h)
    for c in range(h.size):
        e = np.zeros_like(h)
        e[c] = step
        out[c] = (loss_value(h + e, y, loss) - loss_value(h - e, y, loss)) / (2 * step)
    return out


@pytest.mark.parametrize("loss", [MultinomialLogistic(), MultinomialLogistic(offset=[0.3, -1.2, 0.5])])
def test_grad_matches_finite_differences(rng, loss):
    for _ in range(100):
        h = rng.normal(scale=3, size=3)
        y = int(rng.integers(0, 3))
        np.testing.assert_allclose(grad_h(h, y, loss), _fd(h, y, loss), atol=1e-5, rtol=0)


def test_binary_grad_matches_finite_differences(rng):
    loss = BinaryLogistic()
    for _ in range(100):
        h = rng.normal(scale=3, size=1)
        y = int(rng.integers(0, 2))
        np.testing.assert_allclose(grad_h(h, y, loss), _fd(h, y, loss), atol=1e-5, rtol=0)


@given(logits, st.floats(-100, 100), st.data())
def test_loss_shift_invariance(h, shift, data):
    y = data.draw(st.integers(0, h.size - 1))
    assert loss_value(h + shift, y) == pytest.approx(loss_value(h, y), abs=1e-9)


def test_gradient_is_one_smooth(rng):
    for _ in range(500):
        C = int(rng.integers(2, 6))
        h1, h2 = rng.normal(scale=4, size=(2, C))
        y = int(rng.integers(0, C))
        assert np.linalg.norm(grad_h(h1, y) - grad_h(h2, y)) <= np.linalg.norm(h1 - h2) + 1e-12


def test_lipschitz_constants():
    assert lipschitz_G(MultinomialLogistic()) == math.sqrt(2)
    assert lipschitz_G(BinaryLogistic()) == 1.0


def test_lipschitz_sweep(rng):
    C = 4
    h = rng.normal(scale=20, size=(100_000, C))
    y = rng.integers(0, C, size=100_000)
    g = MultinomialLogistic().grad(h, y)
    assert np.linalg.norm(g, axis=1).max() <= math.sqrt(2)
    hb = rng.normal(scale=20, size=(100_000, 1))
    gb = BinaryLogistic().grad(hb, y % 2)
    assert np.abs(gb).max() <= 1.0


def test_multinomial_matches_extended_precision(rng):
    for _ in range(50):
        h = rng.normal(scale=30, size=4)
        y = int(rng.integers(0, 4))
        assert loss_value(h, y) == pytest.approx(_lse_oracle(h, y), rel=1e-12, abs=1e-12)


def _vd(features, labels, n_classes=2):
    clients = tuple(ClientData(m, f) for m, f in enumerate(features))
    return VerticalDataset(clients, labels, n_classes)


def test_accuracy_zero_model_predicts_class_zero():
    data = _vd([np.ones((4, 2))], [0, 1, 0, 1])
    assert accuracy([LocalModel.zeros(2, 2)], data) == 0.5
    assert predict([LocalModel.zeros(2, 2)], data).tolist() == [0, 0, 0, 0]


def test_accuracy_perfect_separation_after_training():
    data = _vd([np.eye(2)], [0, 1])
    model = LocalModel.zeros(2, 2)
    loss = MultinomialLogistic()
    for _ in range(50):
        h = data.clients[0].features @ model.theta.T
        model.theta -= 0.5 * loss.grad(h, data.labels).T @ data.clients[0].features
    assert accuracy([model], data) == 1.0


def test_accuracy_matches_centralized_reference(rng):
    x = rng.normal(size=(60, 5))
    y = (x[:, 0] + 0.3 * rng.normal(size=60) > 0).astype(int)
    theta = np.zeros((2, 5))
    loss = MultinomialLogistic()
    for _ in range(200):
        theta -= 0.1 / 60 * loss.grad(x @ theta.T, y).T @ x
    reference = np.mean(np.argmax(x @ theta.T, axis=1) == y)
    assert accuracy([LocalModel(theta)], _vd([x], y)) == reference


def test_binary_predict_uses_sign():
    data = _vd([np.array([[1.0], [-1.0]])], [1, 0])
    assert accuracy([LocalModel(np.array([[2.0]]))], data) == 1.0


def test_log_prior_offset_makes_zero_model_predict_prior():
    y = np.array([0, 0, 0, 1])
    b = log_prior_offset(y, 2)
    np.testing.assert_allclose(np.exp(b), [0.75, 0.25])
    data = _vd([np.ones((4, 1))], y)
    loss = MultinomialLogistic(b)
    # cross-entropy of the class frequencies
    expected = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25))
    assert mean_loss([LocalModel.zeros(2, 1)], data, loss) == pytest.approx(expected)
    assert accuracy([LocalModel.zeros(2, 1)], data, loss) == 0.75


def test_log_prior_offset_binary_and_missing_class():
    b = log_prior_offset([0, 1, 1, 1], 2, binary=True)
    assert b.tolist() == pytest.approx([math.log(3)])
    with pytest.raises(ValueError):
        log_prior_offset([0, 0], 2)


def test_get_loss():
    assert isinstance(get_loss("binary"), BinaryLogistic)
    with pytest.raises(ValueError):
        get_loss("hinge")
