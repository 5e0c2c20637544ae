# sift.py — scale-space keypoints and descriptors
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from hygienefeat import render
from hygienefeat.config import SiftConfig
from hygienefeat.errors import DegenerateNeighborhood, ImageTooSmall, InvalidRatio, OutOfImage
from hygienefeat.imgcore import (
    FloatImage,
    GrayImage,
    RasterImage,
    blur_array,
    gray_to_rgb,
    normalized,
    resize_bilinear,
    to_grayscale,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
MIN_INPUT_SIZE = 16
# histogram mass below this counts as no gradient at all
GRADIENT_EPS = 1e-10


class SiftKeypoint(BaseModel):
    """
    Location (x, y) and absolute scale sigma are in input-image pixels;
    octave/layer index the pyramid level the extremum was refined in.
    """

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    sigma: float = Field(gt=0)
    octave: int
    layer: int
    response: float
    orientation: Optional[float] = None

    def sort_key(self):
        return (self.octave, self.layer, self.y, self.x, self.orientation or 0.0)


@dataclass(frozen=True, eq=False)
class SiftDescriptor:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True, eq=False)
class ScaleSpacePyramid:
    """
    octaves[o] holds s + 3 Gaussian images of one size; sigmas[o][i] is the
    effective blur of octaves[o][i] in octave-0 pixels.
    """

    octaves: List[List[FloatImage]]
    sigmas: List[List[float]]
    base_sigma: float
    scales_per_octave: int
    upsampled: bool

    def octave_scale(self, octave: int) -> float:
        """Input-image pixels per pixel of the given octave."""
        return (2.0 ** octave) * (0.5 if self.upsampled else 1.0)

    def to_input(self, octave: int, x: float, y: float) -> Tuple[float, float]:
        s = self.octave_scale(octave)
        return (x + 0.5) * s - 0.5, (y + 0.5) * s - 0.5

    def to_octave(self, octave: int, x: float, y: float) -> Tuple[float, float]:
        s = self.octave_scale(octave)
        return (x + 0.5) / s - 0.5, (y + 0.5) / s - 0.5


@dataclass(frozen=True, eq=False)
class DoGPyramid:
    octaves: List[List[FloatImage]]
    pyramid: ScaleSpacePyramid


# ---------------- pyramid ----------------
def octave_count(width: int, height: int, upsample: bool = True) -> int:
    return int(math.floor(math.log2(min(width, height)))) - 2 + (1 if upsample else 0)


def build_pyramid(img: GrayImage, scales_per_octave: int = 3, base_sigma: float = 1.6,
                  upsample: bool = True, assumed_blur: float = 0.5) -> ScaleSpacePyramid:
    if min(img.width, img.height) < MIN_INPUT_SIZE:
        raise ImageTooSmall(f"SIFT needs at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}, got {img.width}x{img.height}")

    s = scales_per_octave
    base = normalized(img)
    blur = assumed_blur
    if upsample:
        base = resize_bilinear(base, 2 * img.width, 2 * img.height)
        blur = 2.0 * assumed_blur
    base = blur_array(base, math.sqrt(max(base_sigma ** 2 - blur ** 2, 0.01)))

    k = 2.0 ** (1.0 / s)
    increments = [math.sqrt((base_sigma * k ** i) ** 2 - (base_sigma * k ** (i - 1)) ** 2)
                  for i in range(1, s + 3)]

    octaves, sigmas = [], []
    for o in range(octave_count(img.width, img.height, upsample)):
        images = [base]
        for inc in increments:
            images.append(blur_array(images[-1], inc))
        octaves.append([FloatImage(im) for im in images])
        sigmas.append([base_sigma * 2.0 ** (o + i / s) for i in range(s + 3)])
        h, w = images[s].shape
        base = resize_bilinear(images[s], w // 2, h // 2)

    logger.debug("pyramid: %d octaves of %d images", len(octaves), s + 3)
    return ScaleSpacePyramid(octaves=octaves, sigmas=sigmas, base_sigma=base_sigma,
                             scales_per_octave=s, upsampled=upsample)


def dog_pyramid(p: ScaleSpacePyramid) -> DoGPyramid:
    octaves = [
        [FloatImage(hi.values - lo.values) for lo, hi in zip(levels, levels[1:])]
        for levels in p.octaves
    ]
    return DoGPyramid(octaves=octaves, pyramid=p)


# ---------------- extrema ----------------
def _round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def _strict_extrema(stack: np.ndarray, layer: int) -> np.ndarray:
    """Interior pixels of stack[layer] strictly above or below all 26 neighbours."""
    _, h, w = stack.shape
    center = stack[layer, 1:-1, 1:-1]
    is_max = np.ones_like(center, dtype=bool)
    is_min = np.ones_like(center, dtype=bool)
    for dl in (-1, 0, 1):
        plane = stack[layer + dl]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dl == 0 and dy == 0 and dx == 0:
                    continue
                nb = plane[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
                is_max &= center > nb
                is_min &= center < nb
    out = np.zeros((h, w), dtype=bool)
    out[1:-1, 1:-1] = is_max | is_min
    return out


def _derivatives(cube: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian at the centre of a (scale, y, x) cube."""
    c = cube[1, 1, 1]
    dx = 0.5 * (cube[1, 1, 2] - cube[1, 1, 0])
    dy = 0.5 * (cube[1, 2, 1] - cube[1, 0, 1])
    ds = 0.5 * (cube[2, 1, 1] - cube[0, 1, 1])
    dxx = cube[1, 1, 2] - 2 * c + cube[1, 1, 0]
    dyy = cube[1, 2, 1] - 2 * c + cube[1, 0, 1]
    dss = cube[2, 1, 1] - 2 * c + cube[0, 1, 1]
    dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
    dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
    dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
    gradient = np.array([dx, dy, ds])
    hessian = np.array([[dxx, dxy, dxs],
                        [dxy, dyy, dys],
                        [dxs, dys, dss]])
    return gradient, hessian


def _refine(stack: np.ndarray, layer: int, y: int, x: int, cfg: SiftConfig):
    """
    Quadratic fit of D around (layer, y, x); returns
    (layer, y, x, offset, value) or None when the candidate is rejected.
    """
    n_layers, h, w = stack.shape
    border = cfg.border
    for _ in range(cfg.refine_iterations):
        cube = stack[layer - 1:layer + 2, y - 1:y + 2, x - 1:x + 2]
        gradient, hessian = _derivatives(cube)
        try:
            offset = -np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            break
        x += _round_half_away(offset[0])
        y += _round_half_away(offset[1])
        layer += _round_half_away(offset[2])
        if not (1 <= layer <= n_layers - 2 and border <= y < h - border and border <= x < w - border):
            return None
    else:
        return None  # no convergence within the iteration cap

    value = cube[1, 1, 1] + 0.5 * float(gradient @ offset)
    if abs(value) < cfg.contrast_threshold:
        return None

    trace = hessian[0, 0] + hessian[1, 1]
    det = hessian[0, 0] * hessian[1, 1] - hessian[0, 1] ** 2
    if det <= 0 or trace * trace / det >= (cfg.edge_r + 1) ** 2 / cfg.edge_r:
        return None
    return layer, y, x, offset, value


def detect_extrema(d: DoGPyramid, contrast_threshold: Optional[float] = None,
                   edge_r: Optional[float] = None, cfg: Optional[SiftConfig] = None) -> List[SiftKeypoint]:
    """
    Scale-space extrema of D refined to subpixel accuracy, with low-contrast and
    edge responses rejected. Orientation is left unset.
    """
    cfg = cfg or SiftConfig()
    update = {}
    if contrast_threshold is not None:
        update["contrast_threshold"] = contrast_threshold
    if edge_r is not None:
        update["edge_r"] = edge_r
    if update:
        cfg = cfg.model_copy(update=update)

    p = d.pyramid
    s = p.scales_per_octave
    prefilter = 0.5 * cfg.contrast_threshold
    keypoints: List[SiftKeypoint] = []
    seen = set()

    for o, levels in enumerate(d.octaves):
        stack = np.stack([lv.values for lv in levels])
        _, h, w = stack.shape
        if h <= 2 * cfg.border or w <= 2 * cfg.border:
            continue
        inner = np.zeros((h, w), dtype=bool)
        inner[cfg.border:h - cfg.border, cfg.border:w - cfg.border] = True

        for layer in range(1, len(levels) - 1):
            candidates = _strict_extrema(stack, layer) & inner & (np.abs(stack[layer]) > prefilter)
            for y, x in zip(*np.nonzero(candidates)):
                refined = _refine(stack, layer, int(y), int(x), cfg)
                if refined is None:
                    continue
                r_layer, ry, rx, offset, value = refined
                if (o, r_layer, ry, rx) in seen:
                    continue
                seen.add((o, r_layer, ry, rx))

                px, py = p.to_input(o, rx + offset[0], ry + offset[1])
                sigma = p.base_sigma * 2.0 ** ((r_layer + offset[2]) / s) * p.octave_scale(o)
                keypoints.append(SiftKeypoint(x=px, y=py, sigma=sigma, octave=o, layer=r_layer,
                                              response=abs(value)))

    keypoints.sort(key=SiftKeypoint.sort_key)
    logger.debug("%d keypoints after refinement", len(keypoints))
    return keypoints


# ---------------- orientation ----------------
def _gradient_patch(img: np.ndarray, x0: int, x1: int, y0: int, y1: int):
    """Central-difference magnitude/angle on rows y0..y1, columns x0..x1 (inclusive)."""
    dx = img[y0:y1 + 1, x0 + 1:x1 + 2] - img[y0:y1 + 1, x0 - 1:x1]
    dy = img[y0 + 1:y1 + 2, x0:x1 + 1] - img[y0 - 1:y1, x0:x1 + 1]
    return np.hypot(dx, dy), np.mod(np.arctan2(dy, dx), TWO_PI)


def orientation_peaks(hist: np.ndarray, peak_ratio: float = 0.8) -> List[float]:
    """Peak bins >= peak_ratio * max, parabola-refined, as angles in [0, 2pi)."""
    n = len(hist)
    left, right = np.roll(hist, 1), np.roll(hist, -1)
    is_peak = (hist > left) & (hist >= right) & (hist >= peak_ratio * hist.max())
    idx = np.nonzero(is_peak)[0]
    if not len(idx):
        idx = np.array([int(np.argmax(hist))])

    angles = []
    for i in idx:
        l, c, r = hist[(i - 1) % n], hist[i], hist[(i + 1) % n]
        denom = l - 2 * c + r
        shift = 0.5 * (l - r) / denom if denom != 0 else 0.0
        angle = ((i + shift) % n) * TWO_PI / n
        angles.append(0.0 if angle >= TWO_PI else float(angle))
    return angles


def assign_orientations(p: ScaleSpacePyramid, kp: SiftKeypoint,
                        cfg: Optional[SiftConfig] = None) -> List[SiftKeypoint]:
    cfg = cfg or SiftConfig()
    img = p.octaves[kp.octave][kp.layer].values
    h, w = img.shape
    scale = p.octave_scale(kp.octave)
    xo, yo = p.to_octave(kp.octave, kp.x, kp.y)
    cx, cy = _round_half_away(xo), _round_half_away(yo)

    weight_sigma = cfg.orientation_sigma_factor * kp.sigma / scale
    radius = max(1, _round_half_away(3 * weight_sigma))
    x0, x1 = max(cx - radius, 1), min(cx + radius, w - 2)
    y0, y1 = max(cy - radius, 1), min(cy + radius, h - 2)
    if x0 > x1 or y0 > y1:
        raise DegenerateNeighborhood("orientation window empty")

    mag, ang = _gradient_patch(img, x0, x1, y0, y1)
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    weights = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * weight_sigma ** 2))

    nb = cfg.orientation_bins
    bins = np.mod(np.floor(ang * nb / TWO_PI + 0.5).astype(np.int64), nb)
    hist = np.bincount(bins.ravel(), weights=(weights * mag).ravel(), minlength=nb)
    if hist.max() <= GRADIENT_EPS:
        raise DegenerateNeighborhood("all gradients vanish around keypoint")

    smooth = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
              + np.roll(hist, 2) + np.roll(hist, -2)) / 16.0
    return [kp.model_copy(update={"orientation": a})
            for a in orientation_peaks(smooth, cfg.orientation_peak_ratio)]


# ---------------- descriptor ----------------
def compute_descriptor(p: ScaleSpacePyramid, kp: SiftKeypoint,
                       cfg: Optional[SiftConfig] = None) -> SiftDescriptor:
    """
    4x4 spatial cells x 8 orientation bins sampled in the keypoint's rotated,
    sigma-scaled frame, trilinearly interpolated, normalised, clamped and
    renormalised.
    """
    cfg = cfg or SiftConfig()
    img = p.octaves[kp.octave][kp.layer].values
    h, w = img.shape
    scale = p.octave_scale(kp.octave)
    xo, yo = p.to_octave(kp.octave, kp.x, kp.y)
    cx, cy = _round_half_away(xo), _round_half_away(yo)

    d, nb = cfg.descriptor_width, cfg.descriptor_bins
    hist_width = cfg.descriptor_scale * kp.sigma / scale
    half = _round_half_away(hist_width * math.sqrt(2) * (d + 1) * 0.5)
    if cx - half < 1 or cx + half > w - 2 or cy - half < 1 or cy + half > h - 2:
        raise OutOfImage(f"descriptor window of radius {half} leaves the octave image")

    theta = kp.orientation or 0.0
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rows, cols = np.mgrid[-half:half + 1, -half:half + 1]
    u = (cos_t * cols + sin_t * rows) / hist_width
    v = (-sin_t * cols + cos_t * rows) / hist_width
    col_bin = u + 0.5 * d - 0.5
    row_bin = v + 0.5 * d - 0.5
    inside = (row_bin > -1) & (row_bin < d) & (col_bin > -1) & (col_bin < d)

    mag, ang = _gradient_patch(img, cx - half, cx + half, cy - half, cy + half)
    weight = np.exp(-(u ** 2 + v ** 2) / (2 * (0.5 * d) ** 2))
    ori_bin = np.mod(ang - theta, TWO_PI) * nb / TWO_PI

    rb, cb, ob = row_bin[inside], col_bin[inside], ori_bin[inside]
    m = (weight * mag)[inside]
    r0, c0, o0 = np.floor(rb).astype(np.int64), np.floor(cb).astype(np.int64), np.floor(ob).astype(np.int64)
    fr, fc, fo = rb - r0, cb - c0, ob - o0

    tensor = np.zeros((d + 2, d + 2, nb))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(tensor, (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % nb), m * wr * wc * wo)

    values = clamp_descriptor(tensor[1:-1, 1:-1, :].ravel(), cfg.descriptor_clamp)
    return SiftDescriptor(values / np.linalg.norm(values))


def clamp_descriptor(raw: np.ndarray, clamp: float) -> np.ndarray:
    """Unit-normalise a raw histogram vector and cap every component at clamp."""
    norm = np.linalg.norm(raw)
    if norm <= GRADIENT_EPS:
        raise DegenerateNeighborhood("descriptor window holds no gradient")
    return np.minimum(raw / norm, clamp)


# ---------------- matching ----------------
def match_descriptors(a: Sequence[SiftDescriptor], b: Sequence[SiftDescriptor],
                      ratio: Optional[float] = None,
                      cfg: Optional[SiftConfig] = None) -> List[Tuple[int, int]]:
    """
    Nearest neighbour in b for each descriptor of a, kept when d1 < ratio * d2.
    ratio falls back to cfg.match_ratio.
    """
    if ratio is None:
        ratio = (cfg or SiftConfig()).match_ratio
    if not 0 < ratio < 1:
        raise InvalidRatio(f"ratio must lie in (0, 1), got {ratio}")
    if not len(a) or not len(b):
        return []

    A = np.stack([x.values for x in a])
    B = np.stack([x.values for x in b])
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    dist = np.sqrt(np.maximum(sq, 0.0))

    matches = []
    for i, row in enumerate(dist):
        order = np.argsort(row, kind="stable")
        d1 = row[order[0]]
        d2 = row[order[1]] if len(order) > 1 else 1.0
        if d1 < ratio * d2:
            matches.append((i, int(order[0])))
    return matches


# ---------------- full pipeline ----------------
@dataclass(frozen=True)
class SiftResult:
    keypoints: List[SiftKeypoint]
    descriptors: List[SiftDescriptor]
    dropped: int


def detect_keypoints(img: RasterImage, cfg: Optional[SiftConfig] = None) -> List[SiftKeypoint]:
    """Refined extrema only (no orientation, no descriptor)."""
    cfg = cfg or SiftConfig()
    p = build_pyramid(to_grayscale(img), cfg.scales_per_octave, cfg.base_sigma,
                      cfg.upsample, cfg.assumed_blur)
    return detect_extrema(dog_pyramid(p), cfg=cfg)


def detect_and_describe(img: RasterImage, cfg: Optional[SiftConfig] = None) -> SiftResult:
    cfg = cfg or SiftConfig()
    p = build_pyramid(to_grayscale(img), cfg.scales_per_octave, cfg.base_sigma,
                      cfg.upsample, cfg.assumed_blur)
    candidates = detect_extrema(dog_pyramid(p), cfg=cfg)

    pairs, dropped = [], 0
    for kp in candidates:
        try:
            oriented = assign_orientations(p, kp, cfg)
        except DegenerateNeighborhood:
            dropped += 1
            continue
        for okp in oriented:
            try:
                pairs.append((okp, compute_descriptor(p, okp, cfg)))
            except (OutOfImage, DegenerateNeighborhood) as e:
                logger.debug("dropping keypoint at (%.1f, %.1f): %s", okp.x, okp.y, e)
                dropped += 1

    pairs.sort(key=lambda pair: pair[0].sort_key())
    logger.debug("%d described keypoints, %d dropped", len(pairs), dropped)
    return SiftResult(keypoints=[k for k, _ in pairs], descriptors=[d for _, d in pairs], dropped=dropped)


def draw_keypoints(img: RasterImage, keypoints: Sequence[SiftKeypoint]) -> RasterImage:
    """Circles with radius sigma and a tick along the orientation."""
    canvas = np.array(gray_to_rgb(img).pixels, copy=True)
    for kp in keypoints:
        cx, cy = _round_half_away(kp.x), _round_half_away(kp.y)
        radius = max(1, _round_half_away(kp.sigma))
        render.paint(canvas, render.circle_pixels(cx, cy, radius), render.YELLOW)
        if kp.orientation is not None:
            ex = _round_half_away(kp.x + radius * math.cos(kp.orientation))
            ey = _round_half_away(kp.y + radius * math.sin(kp.orientation))
            render.paint(canvas, render.line_pixels(cx, cy, ex, ey), render.RED)
    return RasterImage(canvas)
