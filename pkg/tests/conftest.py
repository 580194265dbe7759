"""Shared fixtures.

The desk model (a quick 40-scene training run) is built once per session;
service, CLI, and protocol tests all reuse it.
"""

import numpy as np
import pytest

from gpis import synthetic
from gpis.features import extract_features
from gpis.image_io import Image
from gpis.posterior import ClickSet
from gpis.rng import stream
from gpis.training import TrainConfig, save_checkpoint, train

DESK_CFG = TrainConfig(seed=0, epochs=16, batch=4)


def random_image(seed: int, h: int, w: int) -> Image:
    return Image.from_array(stream(seed, "test-image").random((h, w, 3)))


def random_fm(seed: int, h: int, w: int, prev_prob=None):
    return extract_features(random_image(seed, h, w), prev_prob=prev_prob)


def random_clicks(seed: int, m: int, n: int) -> ClickSet:
    g = stream(seed, "test-clicks")
    idx = g.choice(m, size=n, replace=False)
    clicks = ClickSet()
    for i, p in enumerate(idx):
        clicks = clicks.with_click(int(p), 1 if i % 2 == 0 else -1)
    return clicks


@pytest.fixture(scope="session")
def desk_checkpoint():
    return train(synthetic.train_suite(40), DESK_CFG)


@pytest.fixture(scope="session")
def desk_model(desk_checkpoint):
    return desk_checkpoint.model


@pytest.fixture(scope="session")
def desk_ckpt_path(desk_checkpoint, tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "desk.ckpt"
    save_checkpoint(desk_checkpoint, path)
    return path


@pytest.fixture(scope="session")
def scene_png_path(tmp_path_factory):
    """A synthetic scene written to disk as PNG, with its mask."""
    from PIL import Image as PILImage

    img, gt = synthetic.synth_scene(11, 32, 32)
    root = tmp_path_factory.mktemp("scene")
    ipath, mpath = root / "scene.png", root / "mask.png"
    PILImage.fromarray(np.uint8(img.pixels * 255.0)).save(ipath)
    PILImage.fromarray(np.uint8(gt) * 255).save(mpath)
    return ipath, mpath, img, gt
