# imgcore.py — pixel grids and the primitives every detector is built from
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from hygienefeat.errors import (
    ImageTooSmall,
    InvalidSigma,
    IoFailure,
    MalformedHeader,
    TruncatedData,
    UnsupportedFormat,
)

logger = logging.getLogger(__name__)

_MAGIC_RE = re.compile(rb"\AP(\d)")
# magic, one whitespace byte, "width height", whitespace, maxval, one whitespace byte
_HEADER_RE = re.compile(rb"\AP([56])[ \t\r\n](\d+)[ \t\r\n]+(\d+)[ \t\r\n]+(\d+)[ \t\r\n]")
_CHANNELS = {b"5": 1, b"6": 3}

# BT.601 luma
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(values), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """
    8-bit pixel grid, row-major with the origin top-left.
    Shape is (height, width) for one channel or (height, width, 3) for R,G,B.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.pixels, copy=True)
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ValueError(f"unsupported pixel array shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("images need at least one pixel")
        object.__setattr__(self, "pixels", _frozen(arr))

    @classmethod
    def from_array(cls, arr) -> "RasterImage":
        arr = np.asarray(arr)
        if arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 1):
            return GrayImage(arr)
        return RasterImage(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = object.__hash__


class GrayImage(RasterImage):
    """RasterImage with exactly one channel; holds the intensity function f(x, y)."""

    def __post_init__(self):
        super().__post_init__()
        if self.pixels.ndim != 2:
            raise ValueError("GrayImage needs a single channel")


@dataclass(frozen=True, eq=False)
class FloatImage:
    """Real-valued grid (gradients, response maps, normalised intensities)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError("FloatImage needs a 2-D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("FloatImage values must be finite")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.bits, copy=True).astype(bool)
        if arr.ndim != 2:
            raise ValueError("BinaryMask needs a 2-D array")
        object.__setattr__(self, "bits", _frozen(arr))

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class Kernel1D:
    radius: int
    taps: np.ndarray


@dataclass(frozen=True, eq=False)
class GradientField:
    gx: FloatImage
    gy: FloatImage

    def __post_init__(self):
        if self.gx.values.shape != self.gy.values.shape:
            raise ValueError("gx and gy must share dimensions")


# ---------------- PNM I/O ----------------
def loads_pnm(data: bytes) -> RasterImage:
    magic = _MAGIC_RE.match(data)
    if not magic or magic.group(1) not in (b"5", b"6"):
        raise UnsupportedFormat(f"not a binary PGM/PPM (magic {data[:2]!r})")

    header = _HEADER_RE.match(data)
    if not header:
        raise MalformedHeader("header must be: magic, width, height, 255, each separated by whitespace")

    kind, width, height, maxval = header.groups()
    width, height, maxval = int(width), int(height), int(maxval)
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} not supported (only 255)")
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width}x{height}")

    channels = _CHANNELS[kind]
    expected = width * height * channels
    body = data[header.end():]
    if len(body) < expected:
        raise TruncatedData(f"expected {expected} bytes of pixel data, found {len(body)}")
    if len(body) > expected:
        logger.debug("ignoring %d trailing bytes after the raster", len(body) - expected)

    arr = np.frombuffer(body, dtype=np.uint8, count=expected)
    return RasterImage.from_array(arr.reshape(height, width, channels))


def dumps_pnm(img: RasterImage) -> bytes:
    magic = "P5" if img.channels == 1 else "P6"
    header = f"{magic}\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img.pixels).tobytes()


def load_pnm(path: Union[str, Path]) -> RasterImage:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    return loads_pnm(data)


def save_pnm(img: RasterImage, path: Union[str, Path]) -> None:
    try:
        Path(path).write_bytes(dumps_pnm(img))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# ---------------- colour ----------------
def to_grayscale(img: RasterImage) -> GrayImage:
    if img.channels == 1:
        return img if isinstance(img, GrayImage) else GrayImage(img.pixels)
    rgb = img.pixels.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    luma = r * rgb[:, :, 0] + g * rgb[:, :, 1] + b * rgb[:, :, 2]
    return GrayImage(to_uint8(luma))


def gray_to_rgb(img: RasterImage) -> RasterImage:
    if img.channels == 3:
        return img
    return RasterImage(np.repeat(img.pixels[:, :, None], 3, axis=2))


def normalized(img: GrayImage) -> np.ndarray:
    """Intensities scaled to [0, 1] as float64."""
    return img.pixels.astype(np.float64) / 255.0


# ---------------- convolution ----------------
def _check_sigma(sigma) -> float:
    try:
        value = float(sigma)
    except (TypeError, ValueError):
        raise InvalidSigma(f"sigma must be a number, got {sigma!r}") from None
    if not math.isfinite(value) or value <= 0:
        raise InvalidSigma(f"sigma must be finite and > 0, got {sigma!r}")
    return value


def gaussian_kernel(sigma: float) -> Kernel1D:
    sigma = _check_sigma(sigma)
    radius = int(math.ceil(3 * sigma))
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(d * d) / (2.0 * sigma * sigma))
    taps = taps / taps.sum()
    return Kernel1D(radius=radius, taps=_frozen(taps))


def _pad_mode(n: int) -> str:
    # a single row/column mirrors onto itself
    return "reflect" if n > 1 else "edge"


def _convolve_rows(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    radius = len(taps) // 2
    w = arr.shape[1]
    padded = np.pad(arr, ((0, 0), (radius, radius)), mode=_pad_mode(w))
    out = np.zeros_like(arr, dtype=np.float64)
    for k, tap in enumerate(taps):
        out += tap * padded[:, k:k + w]
    return out


def _convolve_cols(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    radius = len(taps) // 2
    h = arr.shape[0]
    padded = np.pad(arr, ((radius, radius), (0, 0)), mode=_pad_mode(h))
    out = np.zeros_like(arr, dtype=np.float64)
    for k, tap in enumerate(taps):
        out += tap * padded[k:k + h, :]
    return out


def blur_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a float array: horizontal pass, then vertical."""
    kernel = gaussian_kernel(sigma)
    return _convolve_cols(_convolve_rows(np.asarray(arr, dtype=np.float64), kernel.taps), kernel.taps)


def gaussian_blur(img: Union[GrayImage, FloatImage], sigma: float):
    if isinstance(img, FloatImage):
        return FloatImage(blur_array(img.values, sigma))
    if img.channels != 1:
        raise ValueError("gaussian_blur expects a GrayImage or FloatImage")
    return GrayImage(to_uint8(blur_array(img.pixels, sigma)))


def resize_bilinear(arr: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """
    Bilinear resampling with centred samples: destination pixel i reads the
    source at (i + 0.5) * src / dst - 0.5, clamped to the grid.
    """
    if new_w < 1 or new_h < 1:
        raise ImageTooSmall(f"cannot resize to {new_w}x{new_h}")
    arr = np.asarray(arr, dtype=np.float64)
    x0, x1, fx = _axis_samples(arr.shape[1], new_w)
    y0, y1, fy = _axis_samples(arr.shape[0], new_h)
    rows = arr[:, x0] * (1.0 - fx) + arr[:, x1] * fx
    return rows[y0, :] * (1.0 - fy)[:, None] + rows[y1, :] * fy[:, None]


def _axis_samples(n_src: int, n_dst: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    pos = np.clip(pos, 0.0, n_src - 1.0)
    i0 = np.minimum(np.floor(pos).astype(np.int64), max(n_src - 2, 0))
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, pos - i0


def rotate90(arr: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Clockwise (as displayed, y down) rotation: (x, y) -> (h - 1 - y, x) per turn."""
    return np.ascontiguousarray(np.rot90(arr, k=-(quarter_turns % 4), axes=(0, 1)))


# ---------------- masks ----------------
def threshold_binary(img: GrayImage, t: int) -> BinaryMask:
    return BinaryMask(img.pixels > t)


def dilate(mask: BinaryMask, iterations: int = 1) -> BinaryMask:
    if iterations < 1:
        raise ValueError("dilate needs at least one iteration")
    bits = mask.bits
    h, w = bits.shape
    for _ in range(iterations):
        padded = np.pad(bits, 1, mode="constant", constant_values=False)
        grown = np.zeros_like(bits)
        for dy in range(3):
            for dx in range(3):
                grown |= padded[dy:dy + h, dx:dx + w]
        bits = grown
    return BinaryMask(bits)


# ---------------- gradients ----------------
def sobel_array(arr: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    h, w = arr.shape
    if h < 3 or w < 3:
        raise ImageTooSmall(f"Sobel needs at least 3x3, got {w}x{h}")
    p = np.pad(np.asarray(arr, dtype=np.float64), 1, mode="reflect")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return gx, gy


def sobel_gradients(img: Union[GrayImage, FloatImage]) -> GradientField:
    """Raw-scale Sobel f_x, f_y (y grows downwards) with a mirrored border."""
    arr = img.values if isinstance(img, FloatImage) else img.pixels
    gx, gy = sobel_array(arr)
    return GradientField(FloatImage(gx), FloatImage(gy))
