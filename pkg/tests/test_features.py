"""Per-pixel feature extraction, with the blur checked against a dense oracle."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from conftest import random_image
from gpis import oracles
from gpis.exceptions import InvalidInputError
from gpis.features import (
    BASE_FEATURE_DIM,
    BLUR_SIGMAS,
    FEATURE_DIM,
    FEATURE_RECIPE,
    extract_features,
    gather,
)
from gpis.image_io import Image


def test_shapes_and_dims():
    fm = extract_features(random_image(0, 7, 9))
    assert (fm.height, fm.width, fm.m) == (7, 9, 63)
    assert fm.X.shape == (63, BASE_FEATURE_DIM)
    assert fm.I.shape == (63, 3)
    assert fm.X.dtype == np.float64


def test_feature_constants():
    assert FEATURE_DIM == BASE_FEATURE_DIM + 1
    assert BLUR_SIGMAS == (2.0, 8.0)
    assert "v1" in FEATURE_RECIPE


def test_rgb_passthrough_and_coords():
    img = random_image(1, 5, 8)
    fm = extract_features(img)
    flat_rgb = img.pixels.reshape(-1, 3)
    np.testing.assert_array_equal(fm.X[:, 0:3], flat_rgb)
    # pixel (r, c) -> col/(W-1), row/(H-1)
    r, c = 3, 6
    k = r * 8 + c
    assert fm.X[k, 3] == pytest.approx(c / 7.0)
    assert fm.X[k, 4] == pytest.approx(r / 4.0)
    assert fm.X[:, 3:5].min() == 0.0 and fm.X[:, 3:5].max() == 1.0


def test_blur_channels_match_scipy_and_dense_oracle():
    img = random_image(2, 10, 11)
    fm = extract_features(img)
    for bi, sigma in enumerate(BLUR_SIGMAS):
        for ch in range(3):
            ref = gaussian_filter(img.pixels[:, :, ch], sigma,
                                  mode="reflect", truncate=3.0)
            got = fm.X[:, 5 + 3 * bi + ch].reshape(10, 11)
            np.testing.assert_allclose(got, ref, atol=1e-12)
            dense = oracles.dense_blur(img.pixels[:, :, ch], sigma)
            np.testing.assert_allclose(got, dense, atol=1e-10)


def test_prev_prob_channel():
    img = random_image(3, 6, 6)
    prev = np.linspace(0.0, 1.0, 36).reshape(6, 6)
    fm = extract_features(img, prev_prob=prev)
    assert fm.X.shape[1] == FEATURE_DIM
    np.testing.assert_array_equal(fm.X[:, -1], prev.ravel())
    with pytest.raises(InvalidInputError):
        extract_features(img, prev_prob=np.zeros((6, 5)))


def test_xbar_concat_behavior():
    fm = extract_features(random_image(4, 5, 5))
    assert fm.xbar(False).shape == (25, BASE_FEATURE_DIM)
    xb = fm.xbar(True)
    assert xb.shape == (25, BASE_FEATURE_DIM + 3)
    np.testing.assert_array_equal(xb[:, :BASE_FEATURE_DIM], fm.X)
    np.testing.assert_array_equal(xb[:, BASE_FEATURE_DIM:], fm.I)


def test_gather_matches_flat_layout():
    fm = extract_features(random_image(5, 6, 7))
    idx = np.array([0, 13, 41])
    X, I = gather(fm, idx)
    np.testing.assert_array_equal(X, fm.X[idx])
    np.testing.assert_array_equal(I, fm.I[idx])


def test_single_pixel_rows_have_degenerate_coords():
    img = Image.from_array(np.full((1, 1, 3), 0.5))
    fm = extract_features(img)
    assert fm.m == 1
    assert np.isfinite(fm.X).all()
