"""Interactive segmentation with Gaussian process posteriors.

A click on the image becomes an observation for a GP over per-pixel
features; the posterior mean (through a sigmoid) is the segmentation.
Sampling uses a weight-space prior plus a data-driven update, so one
posterior draw costs time linear in the pixel count.  Everything on the
GP side (variational click head, kernel scales, weight-space prior) is
trainable end to end.
"""

from .clicksim import (
    BenchmarkReport,
    ClickTrace,
    evaluate,
    iou,
    next_click,
    simulate,
    sweep_eps,
)
from .exceptions import (
    CheckpointFormatError,
    GpisError,
    InvalidInputError,
    NumericalError,
)
from .features import FeatureMap, extract_features
from .image_io import Image, load_image, load_mask
from .kernel import JitterConfig, KernelParams, kernel_matrix
from .posterior import (
    Click,
    ClickSet,
    GpModel,
    PosteriorSample,
    Predictor,
    build_model,
    decompose,
    exact_posterior,
    pathwise_sample,
    predict,
)
from .rff import WeightSpaceParams, init_weight_space, phi
from .training import (
    ModelCheckpoint,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkReport",
    "CheckpointFormatError",
    "Click",
    "ClickSet",
    "ClickTrace",
    "FeatureMap",
    "GpModel",
    "GpisError",
    "Image",
    "InvalidInputError",
    "JitterConfig",
    "KernelParams",
    "ModelCheckpoint",
    "NumericalError",
    "PosteriorSample",
    "Predictor",
    "TrainConfig",
    "WeightSpaceParams",
    "build_model",
    "decompose",
    "evaluate",
    "exact_posterior",
    "extract_features",
    "init_weight_space",
    "iou",
    "kernel_matrix",
    "load_checkpoint",
    "load_image",
    "load_mask",
    "next_click",
    "pathwise_sample",
    "phi",
    "predict",
    "save_checkpoint",
    "simulate",
    "sweep_eps",
    "train",
    "__version__",
]
