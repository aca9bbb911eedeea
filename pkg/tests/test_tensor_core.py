import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfoattack.errors import InvalidInputError, ShapeError
from dfoattack.tensor_core import (
    ImageTensor,
    apply_perturbation,
    as_logits,
    cross_entropy_loss,
    cw_loss,
    softmax,
)


def test_image_tensor_validates_range_and_shape():
    ImageTensor(np.zeros((1, 2, 2)))
    with pytest.raises(InvalidInputError):
        ImageTensor(np.full((1, 2, 2), 1.5))
    with pytest.raises(ShapeError):
        ImageTensor(np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        ImageTensor(np.full((1, 1, 1), np.nan))


def test_image_tensor_is_immutable():
    img = ImageTensor(np.full((1, 2, 2), 0.5))
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 0.9


def test_from_flat_round_trip():
    flat = np.linspace(0, 1, 12)
    img = ImageTensor.from_flat(flat, (3, 2, 2))
    assert img.shape == (3, 2, 2)
    np.testing.assert_array_equal(img.flat, flat)
    with pytest.raises(ShapeError):
        ImageTensor.from_flat(flat, (3, 2, 3))


def test_softmax_symmetry_and_constant():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(softmax([3.7, 3.7, 3.7]), np.ones(3) / 3, atol=1e-12)


def test_softmax_two_class_value():
    # Direct arithmetic: e^2 / (e^2 + 1) and its complement.
    e2 = math.exp(2.0)
    expected = np.array([e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)])
    np.testing.assert_allclose(softmax([2.0, 0.0]), expected, atol=1e-5)
    np.testing.assert_allclose(softmax([2.0, 0.0]), [0.880797, 0.119203], atol=1e-5)


def test_softmax_overflow_safety():
    probs = softmax([1000.0, 0.0, -1000.0])
    assert np.all(np.isfinite(probs))
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        softmax([np.inf, 0.0])
    with pytest.raises(ShapeError):
        as_logits([1.0])


@given(
    logits=st.lists(st.floats(-50, 50), min_size=2, max_size=8),
    shift=st.floats(-100, 100),
)
@settings(max_examples=200, deadline=None)
def test_softmax_shift_invariance(logits, shift):
    arr = np.asarray(logits)
    np.testing.assert_allclose(softmax(arr), softmax(arr + shift), atol=1e-9)


def test_cross_entropy_values():
    assert cross_entropy_loss([0.0, 0.0], 0) == pytest.approx(math.log(2.0), abs=1e-12)
    # -log(1 / (1 + e^-20)) = log1p(e^-20)
    assert cross_entropy_loss([10.0, -10.0], 0) == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-6)
    # -log(softmax([2, 0])[1])
    expected = -math.log(1.0 / (1.0 + math.exp(2.0)))
    assert cross_entropy_loss([2.0, 0.0], 1) == pytest.approx(expected, abs=1e-9)
    assert cross_entropy_loss([2.0, 0.0], 1) == pytest.approx(2.126928, abs=1e-5)


def test_cross_entropy_non_negative_at_extremes():
    assert cross_entropy_loss([500.0, -500.0], 0) >= 0.0
    assert cross_entropy_loss([500.0, -500.0], 1) >= 0.0


def test_cross_entropy_label_range():
    with pytest.raises(InvalidInputError):
        cross_entropy_loss([0.0, 0.0], 2)
    with pytest.raises(InvalidInputError):
        cross_entropy_loss([0.0, 0.0], -1)


def test_cw_loss_values():
    assert cw_loss([0.0, 0.0], 0) == pytest.approx(0.0, abs=1e-12)
    e2 = math.exp(2.0)
    p_hi, p_lo = e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)
    assert cw_loss([2.0, 0.0], 0) == pytest.approx(-p_hi + p_lo, abs=1e-9)
    assert cw_loss([2.0, 0.0], 0) == pytest.approx(-0.761594, abs=1e-5)
    assert cw_loss([0.0, 2.0], 0) == pytest.approx(0.761594, abs=1e-5)
    with pytest.raises(InvalidInputError):
        cw_loss([0.0, 1.0], 5)


def test_cw_loss_sign_tracks_misclassification():
    rng = np.random.default_rng(7)
    for _ in range(200):
        logits = rng.normal(size=rng.integers(2, 6))
        label = int(rng.integers(logits.size))
        value = cw_loss(logits, label)
        top = int(np.argmax(logits))
        if np.unique(logits).size == logits.size:  # skip exact ties
            assert (value > 0) == (top != label)
        assert -1.0 <= value <= 1.0


def test_losses_monotone_in_label_probability():
    # Lowering the label's logit lowers P(label) while keeping the other
    # classes' ranking fixed; both losses must strictly increase.
    rng = np.random.default_rng(11)
    for _ in range(100):
        logits = rng.normal(size=5)
        label = int(rng.integers(5))
        poked = logits.copy()
        poked[label] -= 0.5
        assert cross_entropy_loss(poked, label) > cross_entropy_loss(logits, label)
        assert cw_loss(poked, label) > cw_loss(logits, label)


def test_apply_perturbation_identity_and_clipping():
    x = ImageTensor(np.full((1, 2, 2), 0.5))
    np.testing.assert_array_equal(apply_perturbation(x, np.zeros(4)).data, x.data)

    ones = ImageTensor(np.ones((1, 2, 2)))
    np.testing.assert_array_equal(apply_perturbation(ones, np.full(4, 0.05)).data, ones.data)

    shifted = apply_perturbation(x, np.full(4, -0.05))
    np.testing.assert_allclose(shifted.data, 0.45)


def test_apply_perturbation_leaves_input_alone():
    x = ImageTensor(np.full((1, 2, 2), 0.5))
    before = x.data.copy()
    apply_perturbation(x, np.full(4, 0.3))
    np.testing.assert_array_equal(x.data, before)


def test_apply_perturbation_shape_error():
    x = ImageTensor(np.full((1, 2, 2), 0.5))
    with pytest.raises(ShapeError):
        apply_perturbation(x, np.zeros(5))


@given(st.lists(st.floats(-10, 10), min_size=12, max_size=12))
@settings(max_examples=200, deadline=None)
def test_apply_perturbation_always_in_range(delta):
    x = ImageTensor(np.linspace(0, 1, 12).reshape(3, 2, 2))
    out = apply_perturbation(x, np.asarray(delta))
    assert out.data.min() >= 0.0
    assert out.data.max() <= 1.0
