"""Reference-guided image colorization on the CPU.

A grayscale target image is colorized by injecting a 512-component color
embedding, extracted from a user-chosen reference image, into a U-shaped
decoder through weight-modulated convolutions.  Training needs no paired
data: references are manufactured from the ground-truth image itself by
noising and thin-plate-spline warping.

The numerical engine (tensors, reverse-mode autodiff, conv kernels) is
self-contained and numpy-backed; no deep-learning framework is required.
"""

from refcolor.imageio import GrayImage, RgbImage, load_image, resize_bilinear, save_image
from refcolor.colorspace import LabImage, compose_lab, lab_to_rgb, rgb_to_lab
from refcolor.tensor import Tensor
from refcolor.model import ColorizerModel, ModelConfig

__all__ = [
    "ColorizerModel",
    "GrayImage",
    "LabImage",
    "ModelConfig",
    "RgbImage",
    "Tensor",
    "compose_lab",
    "lab_to_rgb",
    "load_image",
    "resize_bilinear",
    "rgb_to_lab",
    "save_image",
]

__version__ = "0.1.0"
