"""Image, mask and probability-map I/O.

Accepted inputs are 8-bit RGB/RGBA PNG (alpha is dropped) and binary PPM
(P6).  Ground-truth masks are single-channel PNGs thresholded at 128.
Probability maps export as 8-bit grayscale PNG or as a flat little-endian
float32 file with a JSON sidecar.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .exceptions import InvalidInputError


@dataclass(frozen=True)
class Image:
    """An RGB image with channels scaled to [0, 1].

    ``pixels`` has shape (height, width, 3), float64, row-major.
    """

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError(
                f"image must be at least 1x1, got {self.width}x{self.height}"
            )
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.shape != (self.height, self.width, 3):
            raise InvalidInputError(
                f"pixel array shape {px.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise InvalidInputError("channel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "Image":
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.size == 0:
            raise InvalidInputError(
                f"expected a HxWx3 array, got shape {pixels.shape}"
            )
        return cls(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)

    @classmethod
    def from_uint8(cls, pixels: np.ndarray) -> "Image":
        return cls.from_array(np.asarray(pixels, dtype=np.float64) / 255.0)


def _open_pil(source) -> PILImage.Image:
    try:
        if isinstance(source, (bytes, bytearray)):
            return PILImage.open(io.BytesIO(source))
        return PILImage.open(source)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise InvalidInputError(f"cannot decode image: {exc}") from exc


def load_image(source) -> Image:
    """Load an RGB image from a path, file object or bytes."""
    with _open_pil(source) as pil:
        if pil.format not in (None, "PNG", "PPM"):
            raise InvalidInputError(
                f"unsupported image format {pil.format!r}; expected PNG or PPM"
            )
        if pil.mode == "RGBA":
            pil = pil.convert("RGB")
        if pil.mode != "RGB":
            raise InvalidInputError(
                f"unsupported pixel mode {pil.mode!r}; expected 8-bit RGB/RGBA"
            )
        arr = np.asarray(pil, dtype=np.uint8)
    return Image.from_uint8(arr)


def load_mask(source, expected_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Load a binary mask (H, W) bool from a single-channel PNG.

    Values >= 128 map to foreground.  ``expected_shape`` is (height, width).
    """
    with _open_pil(source) as pil:
        if pil.mode not in ("1", "L", "I", "I;16", "P", "RGB"):
            raise InvalidInputError(f"unsupported mask mode {pil.mode!r}")
        pil = pil.convert("L")
        arr = np.asarray(pil, dtype=np.uint8)
    mask = arr >= 128
    if expected_shape is not None and mask.shape != tuple(expected_shape):
        raise InvalidInputError(
            f"mask shape {mask.shape} does not match image {tuple(expected_shape)}"
        )
    return mask


def encode_gray_png(values01: np.ndarray) -> bytes:
    """Encode a (H, W) array of values in [0, 1] as 8-bit grayscale PNG."""
    values01 = np.asarray(values01, dtype=np.float64)
    if values01.ndim != 2:
        raise InvalidInputError(f"expected a 2-D array, got shape {values01.shape}")
    data = np.rint(255.0 * np.clip(values01, 0.0, 1.0)).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(data, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_mask_png(mask: np.ndarray) -> bytes:
    return encode_gray_png(np.asarray(mask, dtype=bool).astype(np.float64))


def save_png(data: bytes, path) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def write_flat_f32(array: np.ndarray, path) -> None:
    """Write a little-endian float32 dump plus a `.json` sidecar.

    The sidecar records {m, d, order:"row-major"}; 1-D arrays dump with d=1.
    """
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 1-D or 2-D array, got {arr.ndim}-D")
    flat = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(flat.tobytes())
    sidecar = {"m": int(arr.shape[0]), "d": int(arr.shape[1]), "order": "row-major"}
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def load_dataset_dir(root) -> list[tuple[str, Image, np.ndarray]]:
    """Load (name, image, mask) triples from DIR/images + DIR/masks.

    Every images/*.png (or .ppm) must have a masks/<same-name>.png partner;
    missing partners are reported by name.
    """
    images_dir = os.path.join(root, "images")
    masks_dir = os.path.join(root, "masks")
    if not os.path.isdir(images_dir) or not os.path.isdir(masks_dir):
        raise InvalidInputError(
            f"dataset layout must be {root}/images/*.png with "
            f"{root}/masks/<same-name>.png"
        )
    names = sorted(
        f for f in os.listdir(images_dir) if f.lower().endswith((".png", ".ppm"))
    )
    if not names:
        raise InvalidInputError(f"no .png/.ppm images found under {images_dir}")
    missing = []
    pairs = []
    for name in names:
        mask_path = os.path.join(masks_dir, os.path.splitext(name)[0] + ".png")
        if not os.path.exists(mask_path):
            missing.append(name)
            continue
        image = load_image(os.path.join(images_dir, name))
        mask = load_mask(mask_path, expected_shape=(image.height, image.width))
        pairs.append((name, image, mask))
    if missing:
        raise InvalidInputError(
            "images without masks: " + ", ".join(missing)
        )
    return pairs
