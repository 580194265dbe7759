"""Per-pixel features standing in for a learned backbone.

Each pixel gets an 11-dimensional descriptor: raw color, normalized image
coordinates, and the three color channels blurred at two Gaussian scales.
Color gives appearance, coordinates and blurs give spatial locality, which
is all the kernel needs to propagate click information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .exceptions import InvalidInputError
from .image_io import Image

FEATURE_DIM = 12  # with the optional mask-feedback channel
BASE_FEATURE_DIM = 11
BLUR_SIGMAS = (2.0, 8.0)
BLUR_TRUNCATE = 3.0  # kernel radius 3*sigma, renormalized to sum 1
FEATURE_RECIPE = "color+coords+blur2+blur8/v1"


@dataclass(frozen=True)
class FeatureMap:
    """Row-major per-pixel features.

    X is (m, d) with the deep-substitute features, I is (m, 3) with the raw
    color channels, row-aligned with X.  Pixel index = row * width + col.
    """

    width: int
    height: int
    X: np.ndarray
    I: np.ndarray  # noqa: E741 - matching the color-matrix naming

    def __post_init__(self):
        if self.X.shape[0] != self.I.shape[0]:
            raise InvalidInputError("X and I must have the same row count")
        if self.X.shape[0] != self.width * self.height:
            raise InvalidInputError("row count must equal width*height")
        if not (np.isfinite(self.X).all() and np.isfinite(self.I).all()):
            raise InvalidInputError("features must be finite")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def xbar(self, concat_image: bool = True) -> np.ndarray:
        """Kernel input rows: [X | I] when the image is concatenated, else X."""
        if concat_image:
            return np.concatenate([self.X, self.I], axis=1)
        return self.X


def _normalized_coords(n: int, size: int) -> np.ndarray:
    # Degenerate 1-pixel axes get coordinate 0 rather than 0/0.
    if size <= 1:
        return np.zeros(n, dtype=np.float64)
    return np.arange(n, dtype=np.float64) / (size - 1)


def extract_features(image: Image, prev_prob: np.ndarray | None = None) -> FeatureMap:
    """Build the per-pixel FeatureMap for an image.

    Channel order per pixel: [R, G, B, col/(W-1), row/(H-1), blur2(R),
    blur2(G), blur2(B), blur8(R), blur8(G), blur8(B)].  When ``prev_prob``
    (a (H, W) probability map from the previous interaction round) is given,
    it is appended as a 12th channel; this feedback path is experimental and
    off everywhere by default.
    """
    if not isinstance(image, Image):
        raise InvalidInputError("extract_features expects an Image")
    h, w = image.height, image.width
    px = image.pixels  # (h, w, 3)

    cols = np.tile(_normalized_coords(w, w), h)
    rows = np.repeat(_normalized_coords(h, h), w)

    channels = [px[:, :, 0].ravel(), px[:, :, 1].ravel(), px[:, :, 2].ravel()]
    channels += [cols, rows]
    for sigma in BLUR_SIGMAS:
        for c in range(3):
            blurred = gaussian_filter(
                px[:, :, c], sigma=sigma, mode="reflect", truncate=BLUR_TRUNCATE
            )
            channels.append(blurred.ravel())

    if prev_prob is not None:
        prev_prob = np.asarray(prev_prob, dtype=np.float64)
        if prev_prob.shape != (h, w):
            raise InvalidInputError(
                f"prev_prob shape {prev_prob.shape} does not match image ({h}, {w})"
            )
        channels.append(prev_prob.ravel())

    X = np.stack(channels, axis=1)
    I = px.reshape(-1, 3).copy()  # noqa: E741
    return FeatureMap(width=w, height=h, X=X, I=I)


def gather(fm: FeatureMap, indices) -> tuple[np.ndarray, np.ndarray]:
    """Select feature rows by pixel index, in order, duplicates allowed."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= fm.m):
        bad = idx[(idx < 0) | (idx >= fm.m)][0]
        raise InvalidInputError(f"pixel index {bad} out of range [0, {fm.m})")
    return fm.X[idx].copy(), fm.I[idx].copy()
