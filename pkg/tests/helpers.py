"""Shared builders for network and dataset fixtures."""

import numpy as np

from patchcc.dataset import LabeledImage
from patchcc.image import LinearImage, cast_illuminant, normalize
from patchcc.network import HyperParams, NetworkParams, init_params
from patchcc.patches import Patch

TOY = HyperParams(patch_size=8, kernel_count=4, pool_size=4, fc_units=5)

SMALL = HyperParams(patch_size=16, kernel_count=8, pool_size=4, fc_units=8,
                    learning_rate=0.02, momentum=0.9, weight_decay=0.0,
                    batch_size=32, epochs=4, patience=4, patches_per_image=30,
                    seed=1, dtype="float64")


def bias_net(bias=(1.0, 1.0, 1.0), hyper=None):
    """Zero-weight network that always outputs `bias`."""
    params = init_params(hyper or TOY, 0)
    return NetworkParams(
        conv_w=np.zeros_like(params.conv_w), conv_b=np.zeros_like(params.conv_b),
        fc_w=np.zeros_like(params.fc_w), fc_b=np.zeros_like(params.fc_b),
        out_w=np.zeros_like(params.out_w), out_b=np.asarray(bias, dtype=float),
    )


def channel_max_net(patch_size=32, pool_size=8):
    """Hand-built network whose estimate is the per-channel mean of block
    maxima: conv = identity over RGB, FC averages each channel's pooled grid."""
    g = patch_size // pool_size
    fc_w = np.zeros((3, g * g * 3))
    for pos in range(g * g):
        for c in range(3):
            fc_w[c, pos * 3 + c] = 1.0 / (g * g)
    return NetworkParams(
        conv_w=np.eye(3).reshape(3, 1, 1, 3), conv_b=np.zeros(3),
        fc_w=fc_w, fc_b=np.zeros(3),
        out_w=np.eye(3), out_b=np.zeros(3),
    )


def textured_patch(rng, color, size=8):
    """A patch of one chromaticity with multiplicative texture."""
    lum = rng.uniform(0.4, 1.0, size=(size, size, 1))
    return Patch(lum * np.asarray(color)[None, None, :], origin=(0, 0))


def tiled_image(texture, color, tiles=(3, 3)):
    """Tile one luminance texture so every grid patch is identical."""
    lum = np.tile(texture, tiles)[:, :, None]
    return LinearImage(lum * np.asarray(color)[None, None, :])


def make_synthetic_samples(count=9, size=48, seed=0, sat=0.4):
    """Small in-memory labeled dataset with gray-ish textured scenes."""
    samples = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        gray = rng.uniform(0.3, 0.8, size=(size, size, 1))
        tint = 1.0 + sat * (rng.uniform(-0.5, 0.5, size=(size, size, 3)))
        scene = LinearImage(np.clip(gray * tint, 0.0, 1.0))
        ill = normalize((rng.uniform(0.4, 1.2), 1.0, rng.uniform(0.4, 1.2)))
        samples.append(LabeledImage(
            image_id=f"s{i}", image=cast_illuminant(scene, ill),
            illuminant=ill, fold=i % 3,
        ))
    return samples
