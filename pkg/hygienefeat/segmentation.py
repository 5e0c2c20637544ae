# segmentation.py — skin mask, contours, convex hull and moments of the hand blob
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy import ndimage

from hygienefeat import render
from hygienefeat.config import SegmentationConfig
from hygienefeat.errors import EmptyInput, EmptyRegion, NotColorImage
from hygienefeat.imgcore import (
    BinaryMask,
    RasterImage,
    dilate,
    gaussian_blur,
    gray_to_rgb,
    threshold_binary,
    to_grayscale,
)

logger = logging.getLogger(__name__)

Point = Tuple[int, int]

# Moore neighbourhood, clockwise as displayed (y down), starting west
_RING = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_RING_INDEX = {d: i for i, d in enumerate(_RING)}
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class Contour(BaseModel):
    model_config = ConfigDict(frozen=True)

    points: List[Point]

    @field_validator("points")
    @classmethod
    def _not_empty(cls, v):
        if not v:
            raise ValueError("a contour holds at least one point")
        return v


class ConvexPolygon(BaseModel):
    """Vertices counter-clockwise (y up), starting at the lexicographically smallest."""

    model_config = ConfigDict(frozen=True)

    vertices: List[Point]


class Moments(BaseModel):
    model_config = ConfigDict(frozen=True)

    m00: float
    m10: float
    m01: float


class Centroid(BaseModel):
    model_config = ConfigDict(frozen=True)

    cx: float
    cy: float


@dataclass(frozen=True)
class HandSegmentation:
    """Mask, contours, largest contour and hull for one image."""

    mask: BinaryMask
    contours: List[Contour]
    largest: Contour
    hull: ConvexPolygon


# ---------------- skin ----------------
def skin_mask(img: RasterImage, cfg: Optional[SegmentationConfig] = None) -> BinaryMask:
    """
    YCbCr box classifier (BT.601 full-range integer conversion) followed by one
    dilation to close pinholes.
    """
    cfg = cfg or SegmentationConfig()
    if img.channels != 3:
        raise NotColorImage("skin segmentation needs an RGB image")

    rgb = img.pixels.astype(np.int32)
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
    y = (77 * r + 150 * g + 29 * b) >> 8
    cb = ((-43 * r - 85 * g + 128 * b) >> 8) + 128
    cr = ((128 * r - 107 * g - 21 * b) >> 8) + 128

    bits = (
        (y > cfg.y_min)
        & (cb >= cfg.cb_min) & (cb <= cfg.cb_max)
        & (cr >= cfg.cr_min) & (cr <= cfg.cr_max)
    )
    return dilate(BinaryMask(bits), 1)


# ---------------- contours ----------------
def _component_starts(bits: np.ndarray) -> Tuple[np.ndarray, List[int]]:
    labels, count = ndimage.label(bits, structure=_EIGHT_CONNECTED)
    if count == 0:
        return labels, []
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    order = sorted((idx, lab) for lab, idx in zip(ids, first) if lab != 0)
    return labels, [int(idx) for idx, _ in order]


def _trace(padded: np.ndarray, start: Point) -> List[Point]:
    """
    Moore-neighbour tracing from the topmost-leftmost pixel of a component.
    Stops when the walk is about to repeat its first step out of the start
    pixel (Jacob's criterion).
    """
    points = [start]
    cur = start
    backtrack = 0  # west of the start pixel is background
    limit = 8 * int(padded.sum()) + 16

    for _ in range(limit):
        for i in range(1, 9):
            d = (backtrack + i) % 8
            dx, dy = _RING[d]
            if padded[cur[1] + dy, cur[0] + dx]:
                prev = _RING[(backtrack + i - 1) % 8]
                break
        else:
            return points  # isolated pixel

        nxt = (cur[0] + dx, cur[1] + dy)
        if cur == start and len(points) > 1 and nxt == points[1]:
            points.pop()  # the closing visit of the start pixel
            return points

        back_abs = (cur[0] + prev[0], cur[1] + prev[1])
        backtrack = _RING_INDEX[(back_abs[0] - nxt[0], back_abs[1] - nxt[1])]
        points.append(nxt)
        cur = nxt

    logger.warning("contour trace from %s did not close; returning partial boundary", start)
    return points


def find_contours(mask: BinaryMask) -> List[Contour]:
    bits = mask.bits
    _, starts = _component_starts(bits)
    padded = np.pad(bits, 1, mode="constant", constant_values=False)
    w = bits.shape[1]

    contours = []
    for flat_idx in starts:
        y, x = divmod(flat_idx, w)
        traced = _trace(padded, (x + 1, y + 1))
        contours.append(Contour(points=[(px - 1, py - 1) for px, py in traced]))
    return contours


def shoelace_area(points: Sequence[Point]) -> float:
    if len(points) < 3:
        return 0.0
    pts = np.asarray(points, dtype=np.int64)
    x, y = pts[:, 0], pts[:, 1]
    twice = int(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    return abs(twice) / 2.0


def largest_contour(contours: Sequence[Contour]) -> Contour:
    if not contours:
        raise EmptyInput("no contours found")
    best, best_area = contours[0], shoelace_area(contours[0].points)
    for c in contours[1:]:
        area = shoelace_area(c.points)
        if area > best_area:
            best, best_area = c, area
    return best


# ---------------- hull ----------------
def cross(o: Point, a: Point, b: Point) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence[Point]) -> ConvexPolygon:
    """Andrew's monotone chain on exact integers; collinear edge points are dropped."""
    if not len(points):
        raise EmptyInput("convex hull of no points")
    pts = sorted({(int(x), int(y)) for x, y in points})
    if len(pts) == 1:
        return ConvexPolygon(vertices=pts)

    lower: List[Point] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: List[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return ConvexPolygon(vertices=lower[:-1] + upper[:-1])


def polygon_contains(poly: ConvexPolygon, p: Point) -> bool:
    """Inside-or-on test for a convex polygon."""
    v = poly.vertices
    if len(v) == 1:
        return tuple(p) == tuple(v[0])
    if len(v) == 2:
        (ax, ay), (bx, by) = v
        return (cross(v[0], v[1], p) == 0
                and min(ax, bx) <= p[0] <= max(ax, bx)
                and min(ay, by) <= p[1] <= max(ay, by))
    return all(cross(v[i], v[(i + 1) % len(v)], p) >= 0 for i in range(len(v)))


# ---------------- moments ----------------
def region_moments(mask: BinaryMask) -> Moments:
    ys, xs = np.nonzero(mask.bits)
    return Moments(m00=float(len(xs)), m10=float(xs.sum()), m01=float(ys.sum()))


def centroid(m: Moments) -> Centroid:
    if m.m00 <= 0:
        raise EmptyRegion("no hand pixels in frame")
    return Centroid(cx=m.m10 / m.m00, cy=m.m01 / m.m00)


def filled_region(mask: BinaryMask, contour: Contour) -> BinaryMask:
    """The component the contour outlines, with its holes filled."""
    labels, _ = ndimage.label(mask.bits, structure=_EIGHT_CONNECTED)
    x, y = contour.points[0]
    region = labels == labels[y, x]
    return BinaryMask(ndimage.binary_fill_holes(region))


# ---------------- hand segmentation ----------------
def segment_hand(img: RasterImage, cfg: Optional[SegmentationConfig] = None,
                 use_skin: bool = False) -> HandSegmentation:
    """
    Gray-scale, blur, threshold (or skin mask), contours, largest contour, hull.
    """
    cfg = cfg or SegmentationConfig()
    if use_skin:
        mask = skin_mask(img, cfg)
    else:
        gray = gaussian_blur(to_grayscale(img), cfg.blur_sigma)
        mask = threshold_binary(gray, cfg.threshold)

    contours = find_contours(mask)
    largest = largest_contour(contours)
    hull = convex_hull(largest.points)
    logger.debug("%d contours, largest has %d points, hull %d vertices",
                 len(contours), len(largest.points), len(hull.vertices))
    return HandSegmentation(mask=mask, contours=contours, largest=largest, hull=hull)


def draw_overlay(img: RasterImage, contour: Optional[Contour], hull: Optional[ConvexPolygon],
                 points: Sequence[Point] = ()) -> RasterImage:
    """Contour in green, hull edges in red, 3x3 blue markers; the input is untouched."""
    w, h = img.width, img.height
    contour_pts = contour.points if contour else []
    hull_pts = hull.vertices if hull else []
    render.check_in_bounds(contour_pts, w, h)
    render.check_in_bounds(hull_pts, w, h)
    render.check_in_bounds(points, w, h)

    canvas = np.array(gray_to_rgb(img).pixels, copy=True)
    render.paint(canvas, contour_pts, render.GREEN)

    n = len(hull_pts)
    edges = [(hull_pts[i], hull_pts[(i + 1) % n]) for i in range(n if n > 2 else max(n - 1, 0))]
    if n == 1:
        render.paint(canvas, hull_pts, render.RED)
    for (x0, y0), (x1, y1) in edges:
        render.paint(canvas, render.line_pixels(x0, y0, x1, y1), render.RED)

    for x, y in points:
        render.paint(canvas, render.square_pixels(x, y, 1), render.BLUE)
    return RasterImage(canvas)
