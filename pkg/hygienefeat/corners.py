# corners.py — structure-tensor corners: Harris and Shi-Tomasi
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from hygienefeat import render
from hygienefeat.config import CornerConfig
from hygienefeat.errors import InvalidK
from hygienefeat.imgcore import (
    BinaryMask,
    FloatImage,
    GrayImage,
    RasterImage,
    blur_array,
    dilate,
    gray_to_rgb,
    normalized,
    sobel_array,
    to_grayscale,
)

logger = logging.getLogger(__name__)

DETECTORS = ("harris", "shi_tomasi")


class CornerPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: int
    y: int
    response: float


@dataclass(frozen=True, eq=False)
class StructureTensorField:
    """Per-pixel M = [[ixx, ixy], [ixy, iyy]] of Gaussian-windowed gradient products."""

    ixx: FloatImage
    ixy: FloatImage
    iyy: FloatImage
    window_sigma: float


def structure_tensor(img: GrayImage, window_sigma: float) -> StructureTensorField:
    gx, gy = sobel_array(normalized(img))
    return StructureTensorField(
        ixx=FloatImage(blur_array(gx * gx, window_sigma)),
        ixy=FloatImage(blur_array(gx * gy, window_sigma)),
        iyy=FloatImage(blur_array(gy * gy, window_sigma)),
        window_sigma=window_sigma,
    )


def harris_response(field: StructureTensorField, k: float) -> FloatImage:
    """det(M) - k * trace(M)^2; positive on corners, negative on edges."""
    if not 0 < k < 0.25:
        raise InvalidK(f"Harris k must lie in (0, 0.25), got {k}")
    a, b, c = field.ixx.values, field.ixy.values, field.iyy.values
    return FloatImage((a * c - b * b) - k * (a + c) ** 2)


def shi_tomasi_response(field: StructureTensorField) -> FloatImage:
    """Smaller eigenvalue of M, zero wherever det(M) <= 0."""
    a, b, c = field.ixx.values, field.ixy.values, field.iyy.values
    lam_min = (a + c) / 2.0 - np.sqrt(((a - c) / 2.0) ** 2 + b * b)
    det = a * c - b * b
    return FloatImage(np.where(det > 0, np.maximum(lam_min, 0.0), 0.0))


def relative_threshold(response: FloatImage, cfg: CornerConfig) -> float:
    return cfg.quality_level * float(response.values.max())


def _local_maxima(values: np.ndarray) -> np.ndarray:
    """Strict 3x3 maxima; a tie goes to the neighbour that comes first in row-major order."""
    h, w = values.shape
    padded = np.pad(values, 1, mode="constant", constant_values=-np.inf)
    keep = np.ones_like(values, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            earlier = dy < 0 or (dy == 0 and dx < 0)
            keep &= (values > nb) if earlier else (values >= nb)
    return keep


def detect_corners(response: FloatImage, cfg: Optional[CornerConfig] = None) -> List[CornerPoint]:
    cfg = cfg or CornerConfig()
    values = response.values
    h, w = values.shape

    peak = float(values.max())
    if cfg.absolute_threshold is None:
        if peak <= 0:
            return []
        threshold = relative_threshold(response, cfg)
    else:
        threshold = cfg.absolute_threshold

    keep = (values >= threshold) & (values > 0) & _local_maxima(values)
    ys, xs = np.nonzero(keep)
    if not len(xs):
        return []
    scores = values[ys, xs]
    order = np.lexsort((ys * w + xs, -scores))

    min_d2 = cfg.min_distance ** 2
    accepted = np.empty((0, 2), dtype=np.int64)
    corners: List[CornerPoint] = []
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if len(accepted):
            d2 = (accepted[:, 0] - x) ** 2 + (accepted[:, 1] - y) ** 2
            if d2.min() < min_d2:
                continue
        accepted = np.vstack([accepted, (x, y)])
        corners.append(CornerPoint(x=x, y=y, response=float(scores[i])))
        if len(corners) >= cfg.max_corners:
            break

    logger.debug("%d local maxima above %.6g, %d corners kept", len(xs), threshold, len(corners))
    return corners


def corner_response(img: RasterImage, detector: str, cfg: Optional[CornerConfig] = None) -> FloatImage:
    cfg = cfg or CornerConfig()
    field = structure_tensor(to_grayscale(img), cfg.window_sigma)
    if detector == "harris":
        return harris_response(field, cfg.harris_k)
    if detector == "shi_tomasi":
        return shi_tomasi_response(field)
    raise ValueError(f"unknown corner detector {detector!r}")


def harris_corners(img: RasterImage, cfg: Optional[CornerConfig] = None) -> List[CornerPoint]:
    return detect_corners(corner_response(img, "harris", cfg), cfg)


def shi_tomasi_corners(img: RasterImage, cfg: Optional[CornerConfig] = None) -> List[CornerPoint]:
    return detect_corners(corner_response(img, "shi_tomasi", cfg), cfg)


def mark_corners(img: RasterImage, corners: Sequence[CornerPoint]) -> RasterImage:
    """Red dots: a 3x3 block per corner, dilated once (5x5, clipped at the border)."""
    render.check_in_bounds([(c.x, c.y) for c in corners], img.width, img.height)
    canvas = np.array(gray_to_rgb(img).pixels, copy=True)
    if not corners:
        return RasterImage(canvas)

    dots = np.zeros((img.height, img.width), dtype=bool)
    for c in corners:
        dots[max(c.y - 1, 0):c.y + 2, max(c.x - 1, 0):c.x + 2] = True
    dots = dilate(BinaryMask(dots), 1).bits
    canvas[dots] = render.RED
    return RasterImage(canvas)
