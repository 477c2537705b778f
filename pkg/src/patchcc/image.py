"""Linear-RGB images, illuminant vectors, diagonal casting/correction, and 16-bit PPM IO.

Pixel data lives in float64 numpy arrays of shape (height, width, 3) holding
linear radiometric values. Arrays are made read-only on construction so images
can be shared freely between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FormatError,
    ImageTooSmallError,
    InvalidIlluminantError,
    ShapeMismatchError,
)

PPM_MAXVAL = 65535

# Unit illuminant vectors are stored in PPM files scaled by this factor so the
# largest possible component (1.0) still fits below maxval.
ILLUMINANT_MAP_SCALE = 1.0 / math.sqrt(3.0)


@dataclass(frozen=True, eq=False)
class Illuminant:
    """An RGB light color, nonnegative with at least one positive component.

    `normalized` marks vectors of unit Euclidean length; estimation targets
    are always normalized since the illuminant is only recoverable up to scale.
    """

    rgb: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(rgb)):
            raise InvalidIlluminantError(f"non-finite illuminant components: {rgb}")
        if np.any(rgb < 0):
            raise InvalidIlluminantError(f"negative illuminant components: {rgb}")
        if not np.any(rgb > 0):
            raise InvalidIlluminantError("illuminant is the zero vector")
        if self.normalized and abs(float(np.linalg.norm(rgb)) - 1.0) > 1e-9:
            raise InvalidIlluminantError(
                f"illuminant tagged normalized but |v|={np.linalg.norm(rgb)}"
            )
        rgb.setflags(write=False)
        object.__setattr__(self, "rgb", rgb)

    def __repr__(self):
        r, g, b = self.rgb
        return f"Illuminant({r:.6f}, {g:.6f}, {b:.6f}, normalized={self.normalized})"


def normalize(v) -> Illuminant:
    """Scale a nonnegative, nonzero 3-vector to unit Euclidean length."""
    if isinstance(v, Illuminant):
        v = v.rgb
    arr = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise InvalidIlluminantError(f"non-finite vector: {arr}")
    if np.any(arr < 0):
        raise InvalidIlluminantError(f"negative components: {arr}")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise InvalidIlluminantError("cannot normalize the zero vector")
    return Illuminant(arr / norm, normalized=True)


def neutral_illuminant() -> Illuminant:
    """The achromatic unit illuminant (1,1,1)/sqrt(3)."""
    return normalize((1.0, 1.0, 1.0))


@dataclass(frozen=True, eq=False)
class LinearImage:
    """Immutable linear-RGB raster: data[y, x] = (R, G, B), finite and >= 0.

    Values are nominally in [0, 1] (scaled 16-bit samples) but may exceed 1
    after von Kries correction; no upper clamp is applied anywhere.
    """

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ShapeMismatchError(f"expected (H, W, 3) pixel array, got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ImageTooSmallError(f"image dimensions must be >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeMismatchError("pixel data contains non-finite values")
        if np.any(data < 0):
            raise ShapeMismatchError("pixel data contains negative values")
        if data.base is not None or data.flags.writeable:
            data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __repr__(self):
        return f"LinearImage({self.width}x{self.height})"


def cast_illuminant(img: LinearImage, ill: Illuminant) -> LinearImage:
    """Multiply each pixel channel-wise by a normalized illuminant.

    Synthesis inverse of `correct_von_kries`; used to build ground-truth
    scenes with a known light color.
    """
    if not ill.normalized:
        raise InvalidIlluminantError("cast_illuminant requires a normalized illuminant")
    return LinearImage(img.data * ill.rgb[None, None, :])


def correct_von_kries(img: LinearImage, ill: Illuminant) -> LinearImage:
    """Divide each pixel channel-wise by the illuminant (diagonal correction).

    The output is clamped below at 0 but not above 1; the number of channel
    samples exceeding 1 is recorded in meta["saturated_values"].
    """
    if np.any(ill.rgb <= 0):
        raise InvalidIlluminantError(
            f"von Kries correction needs strictly positive channels, got {ill.rgb}"
        )
    out = img.data / ill.rgb[None, None, :]
    out = np.maximum(out, 0.0)
    saturated = int(np.count_nonzero(out > 1.0))
    return LinearImage(out, meta={"saturated_values": saturated})


def compose_two_illuminants(
    img: LinearImage, left: Illuminant, right: Illuminant
) -> tuple[LinearImage, np.ndarray]:
    """Cast the left half of the image with one illuminant and the right half
    with another.

    Columns [0, width//2) get `left`, the rest get `right`. Returns the cast
    image and an (H, W, 3) per-pixel ground-truth map of unit illuminants.
    """
    if img.width < 2:
        raise ImageTooSmallError("two-illuminant composition needs width >= 2")
    if not (left.normalized and right.normalized):
        raise InvalidIlluminantError("both illuminants must be normalized")
    split = img.width // 2
    out = np.empty_like(img.data)
    out[:, :split, :] = img.data[:, :split, :] * left.rgb[None, None, :]
    out[:, split:, :] = img.data[:, split:, :] * right.rgb[None, None, :]
    gt = np.empty_like(img.data)
    gt[:, :split, :] = left.rgb
    gt[:, split:, :] = right.rgb
    return LinearImage(out), gt


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Read one whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError("unexpected end of header", offset=pos)
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def _parse_ppm16(buf: bytes) -> np.ndarray:
    magic, pos = _next_token(buf, 0)
    if magic != b"P6":
        raise FormatError(f"not a binary PPM (magic {magic!r})", offset=0)
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"bad {name} field {tok!r}", offset=pos - len(tok)) from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}", offset=pos)
    if maxval != PPM_MAXVAL:
        raise FormatError(f"maxval must be {PPM_MAXVAL}, got {maxval}", offset=pos)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    expected = width * height * 3 * 2
    payload = buf[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}",
            offset=pos,
        )
    samples = np.frombuffer(payload, dtype=">u2").astype(np.float64)
    return samples.reshape(height, width, 3)


def load_ppm16(path) -> LinearImage:
    """Load a binary P6 PPM with 16-bit big-endian samples, scaled to [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    return LinearImage(_parse_ppm16(buf) / PPM_MAXVAL)


def _quantize16(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and quantize to 16 bits with round-half-up."""
    clamped = np.clip(values, 0.0, 1.0)
    return np.floor(clamped * PPM_MAXVAL + 0.5).astype(">u2")


def save_ppm16(img: LinearImage, path, comment: str | None = None):
    """Write a binary P6 PPM with 16-bit big-endian samples."""
    header = b"P6\n"
    if comment:
        header += b"# " + comment.encode("ascii") + b"\n"
    header += f"{img.width} {img.height}\n{PPM_MAXVAL}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(_quantize16(img.data).tobytes())


def save_illuminant_map_ppm(gt_map: np.ndarray, path):
    """Serialize a per-pixel map of unit illuminants as a 16-bit PPM.

    Components are scaled by 1/sqrt(3) so every unit vector fits in [0, 1];
    the scaling is recorded in a header comment.
    """
    gt_map = np.asarray(gt_map, dtype=np.float64)
    img = LinearImage(gt_map * ILLUMINANT_MAP_SCALE)
    save_ppm16(img, path, comment="illuminant map: unit RGB scaled by 65535/sqrt(3)")


def load_illuminant_map_ppm(path) -> np.ndarray:
    """Read a map written by `save_illuminant_map_ppm`, renormalizing each pixel."""
    img = load_ppm16(path)
    data = img.data / ILLUMINANT_MAP_SCALE
    norms = np.linalg.norm(data, axis=2, keepdims=True)
    if np.any(norms == 0):
        raise FormatError("illuminant map contains zero vectors")
    return data / norms
