"""Resizing, patch extraction, exclusion masks, and contrast normalization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, SamplingImpossibleError
from .image import LinearImage

DEGENERATE_RANGE = 1e-12
MAX_REJECTIONS_PER_PATCH = 10_000


@dataclass(frozen=True, eq=False)
class Patch:
    """A square window of image data with its source origin (x, y).

    After histogram stretching the joint min over all channels is 0 and the
    joint max is 1, unless the patch had no contrast at all; such patches are
    flagged `degenerate` and zero-filled.
    """

    data: np.ndarray
    origin: tuple[int, int]
    degenerate: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] != data.shape[1] or data.shape[2] != 3:
            raise ParameterError(f"patch data must be (S, S, 3), got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def size(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class ExclusionMask:
    """Axis-aligned rectangles (x, y, w, h) that patches must not touch."""

    rects: tuple[tuple[int, int, int, int], ...] = ()

    @staticmethod
    def from_rects(rects) -> "ExclusionMask":
        return ExclusionMask(tuple(tuple(int(v) for v in r) for r in rects))

    def intersects(self, x: int, y: int, size: int) -> bool:
        for rx, ry, rw, rh in self.rects:
            if x < rx + rw and rx < x + size and y < ry + rh and ry < y + size:
                return True
        return False


def resize_max_side(img: LinearImage, target: int) -> LinearImage:
    """Downscale so the longer side equals `target`; never upscales.

    Bilinear interpolation on the linear values, pixel centers aligned
    (source coordinate = (i + 0.5) * scale - 0.5).
    """
    if target < 1:
        raise ParameterError(f"target must be >= 1, got {target}")
    longest = max(img.width, img.height)
    if longest <= target:
        return img
    scale = target / longest
    out_w = max(1, int(np.floor(img.width * scale + 0.5)))
    out_h = max(1, int(np.floor(img.height * scale + 0.5)))
    return LinearImage(_bilinear(img.data, out_h, out_w))


def _bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = data.shape[:2]
    src_y = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    src_x = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(src_y).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(src_x).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = np.clip(src_y - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(src_x - x0, 0.0, 1.0)[None, :, None]
    top = data[y0][:, x0] * (1 - fx) + data[y0][:, x1] * fx
    bottom = data[y1][:, x0] * (1 - fx) + data[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def extract_grid_patches(img: LinearImage, size: int) -> list[Patch]:
    """Non-overlapping tiles from (0, 0) in row-major order.

    Partial border tiles are discarded, so the count is
    floor(w/size) * floor(h/size); an image smaller than one patch yields [].
    """
    if size < 1:
        raise ParameterError(f"patch size must be >= 1, got {size}")
    cols = img.width // size
    rows = img.height // size
    out = []
    for gy in range(rows):
        for gx in range(cols):
            x, y = gx * size, gy * size
            out.append(Patch(img.data[y : y + size, x : x + size, :], origin=(x, y)))
    return out


def sample_random_patches(
    img: LinearImage,
    size: int,
    count: int,
    mask: ExclusionMask | None = None,
    seed=0,
) -> list[Patch]:
    """Sample `count` patch origins uniformly at random, with replacement.

    Origins whose size x size footprint touches the exclusion mask are
    rejected and redrawn, up to 10,000 rejections per patch. Deterministic
    for a given seed.
    """
    if size < 1:
        raise ParameterError(f"patch size must be >= 1, got {size}")
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    if img.width < size or img.height < size:
        raise SamplingImpossibleError(
            f"image {img.width}x{img.height} cannot fit a {size}x{size} patch"
        )
    mask = mask or ExclusionMask()
    rng = np.random.default_rng(seed)
    max_x = img.width - size
    max_y = img.height - size
    out = []
    for _ in range(count):
        for attempt in range(MAX_REJECTIONS_PER_PATCH + 1):
            x = int(rng.integers(0, max_x + 1))
            y = int(rng.integers(0, max_y + 1))
            if not mask.intersects(x, y, size):
                break
        else:
            raise SamplingImpossibleError(
                f"no mask-free {size}x{size} origin found after "
                f"{MAX_REJECTIONS_PER_PATCH} rejections"
            )
        out.append(Patch(img.data[y : y + size, x : x + size, :], origin=(x, y)))
    return out


def histogram_stretch(patch: Patch) -> Patch:
    """Affinely rescale a patch to [0, 1] using the joint min/max of all
    three channels.

    One global affine map keeps the relative contributions of the channels
    intact; per-channel stretching would destroy the chromatic signal.
    Patches with joint range below 1e-12 are flagged degenerate and zeroed.
    """
    lo = float(patch.data.min())
    hi = float(patch.data.max())
    if hi - lo < DEGENERATE_RANGE:
        return replace(patch, data=np.zeros_like(patch.data), degenerate=True)
    return replace(patch, data=(patch.data - lo) / (hi - lo), degenerate=False)
