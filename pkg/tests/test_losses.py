import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rangediff.losses import (
    EmptyMaskWarning,
    GradientPyramidExtractor,
    LossWeights,
    NonFiniteLossError,
    combined_loss,
    mse_grad,
    mse_loss,
    perceptual_grad,
    perceptual_loss,
    pixel_distance_grad,
    pixel_distance_loss,
)


def numeric_grad(f, d, h=1e-6):
    g = np.zeros_like(d)
    for idx in np.ndindex(d.shape):
        e = np.zeros_like(d)
        e[idx] = h
        g[idx] = (f(d + e) - f(d - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def pair(rng, shape=(2, 16, 32)):
    x0 = rng.uniform(-1, 1, shape)
    d = x0 + rng.choice([-1, 1], shape) * rng.uniform(0.01, 0.5, shape)  # no |x0 - d| kinks
    return x0, d


# --- MSE ----------------------------------------------------------------------


def test_mse_constants():
    assert mse_loss(np.ones((3, 4)), np.ones((3, 4))) == 0.0
    assert mse_loss(np.zeros((3, 4)), np.full((3, 4), 2.0)) == 4.0


def test_mse_loop_oracle(rng):
    x0, d = rng.standard_normal((2, 7, 9))
    acc = 0.0
    for i in range(7):
        for j in range(9):
            acc += (x0[i, j] - d[i, j]) ** 2
    assert abs(mse_loss(x0, d) - acc / 63) < 1e-12


def test_shape_mismatch():
    for fn in (mse_loss, pixel_distance_loss, perceptual_loss):
        with pytest.raises(ValueError):
            fn(np.zeros((4, 4)), np.zeros((4, 5)))


# --- pixel distance -----------------------------------------------------------


def test_pixel_constants():
    assert pixel_distance_loss(np.ones((3, 4)), np.full((3, 4), 3.0)) == 2.0
    assert pixel_distance_loss(np.ones((3, 4)), np.ones((3, 4))) == 0.0


def test_pixel_masked_loop_oracle(rng):
    x0, d = rng.standard_normal((2, 6, 11))
    valid = rng.random((6, 11)) < 0.6
    acc, n = 0.0, 0
    for i in range(6):
        for j in range(11):
            if valid[i, j]:
                acc += abs(x0[i, j] - d[i, j])
                n += 1
    assert abs(pixel_distance_loss(x0, d, valid) - acc / n) < 1e-12


def test_pixel_empty_mask_warns():
    with pytest.warns(EmptyMaskWarning):
        assert pixel_distance_loss(np.zeros((3, 3)), np.ones((3, 3)), np.zeros((3, 3), bool)) == 0.0
    assert np.all(pixel_distance_grad(np.zeros((3, 3)), np.ones((3, 3)), np.zeros((3, 3), bool)) == 0)


def test_invalid_pixels_carry_no_gradient(rng):
    x0, d = pair(rng, (8, 8))
    valid = rng.random((8, 8)) < 0.5
    g = pixel_distance_grad(x0, d, valid)
    assert np.all(g[~valid] == 0)


# --- perceptual ---------------------------------------------------------------


def test_perceptual_zero_and_nonnegative(rng):
    x0, d = pair(rng)
    assert perceptual_loss(x0, x0) == 0.0
    assert perceptual_loss(x0, d) >= 0.0


def test_perceptual_translation_sensitive():
    img = np.zeros((32, 128))
    img[8:20, 30:60] = 0.8
    shifted = np.roll(img, 5, axis=1)
    assert perceptual_loss(img, shifted) > perceptual_loss(img, img)


def test_perceptual_prefers_structure_over_noise(rng):
    img = np.zeros((32, 128))
    img[8:20, 30:60] = 0.8
    noisy = img + 0.02 * rng.standard_normal(img.shape)
    shifted = np.roll(img, 8, axis=1)
    # small pixel noise barely moves pooled features; moved structure does
    assert perceptual_loss(img, noisy) < perceptual_loss(img, shifted)


def test_extractor_finite_and_deterministic(rng):
    ext = GradientPyramidExtractor()
    img = rng.standard_normal((1, 32, 128))
    f1, f2 = ext.features(img), ext.features(img)
    assert len(f1) == 6
    for a, b in zip(f1, f2):
        assert np.all(np.isfinite(a)) and a.tobytes() == b.tobytes()


# --- gradients ----------------------------------------------------------------


@pytest.mark.parametrize(
    "loss,grad",
    [
        (mse_loss, mse_grad),
        (pixel_distance_loss, pixel_distance_grad),
        (perceptual_loss, perceptual_grad),
    ],
)
def test_gradients_match_finite_differences(rng, loss, grad):
    x0, d = pair(rng, (1, 16, 32))
    num = numeric_grad(lambda v: loss(x0, v), d)
    assert rel_err(grad(x0, d), num) < 1e-3


def test_masked_pixel_gradient(rng):
    x0, d = pair(rng, (8, 16))
    valid = rng.random((8, 16)) < 0.5
    num = numeric_grad(lambda v: pixel_distance_loss(x0, v, valid), d)
    assert rel_err(pixel_distance_grad(x0, d, valid), num) < 1e-3


def test_combined_gradient(rng):
    x0, d = pair(rng, (1, 16, 32))
    valid = rng.random(x0.shape) < 0.7
    w = LossWeights(0.7, 1.3, 0.4)
    _, _, g = combined_loss(x0, d, w, valid=valid, grad=True)
    num = numeric_grad(lambda v: combined_loss(x0, v, w, valid=valid)[0], d)
    assert rel_err(g, num) < 1e-3


# --- combined -----------------------------------------------------------------


def test_combined_mse_only(rng):
    x0, d = pair(rng)
    total, terms = combined_loss(x0, d, LossWeights(1, 0, 0))
    assert total == mse_loss(x0, d) == terms["mse"]


def test_combined_identical_is_zero(rng):
    x0, _ = pair(rng)
    for w in (LossWeights(), LossWeights(2, 3, 4)):
        assert combined_loss(x0, x0, w)[0] == 0.0


def test_combined_linear_in_weights(rng):
    x0, d = pair(rng)
    t1, terms = combined_loss(x0, d, LossWeights(1.0, 0.5, 1.0))
    t2, _ = combined_loss(x0, d, LossWeights(1.0, 0.5, 2.0))
    assert abs((t2 - t1) - terms["pixel"]) < 1e-12


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 0.5, 1.0)


def test_non_finite_reports_term():
    x0 = np.zeros((8, 8))
    d = np.zeros((8, 8))
    d[0, 0] = np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(NonFiniteLossError) as e:
            combined_loss(x0, d)
    assert e.value.term == "mse"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_symmetry_and_nonnegativity(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 8, 16))
    assert mse_loss(a, b) == mse_loss(b, a) >= 0
    assert pixel_distance_loss(a, b) == pixel_distance_loss(b, a) >= 0
    assert perceptual_loss(a, b) >= 0
