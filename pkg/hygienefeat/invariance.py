# invariance.py — rotation / scale / illumination repeatability of the three detectors
import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage
from scipy.spatial import cKDTree

from hygienefeat import corners, sift
from hygienefeat.config import ProtocolConfig, Settings
from hygienefeat.errors import ImageTooSmall, InsufficientFeatures, InvalidTransform, IoFailure
from hygienefeat.imgcore import GrayImage, RasterImage, resize_bilinear, rotate90, to_grayscale, to_uint8

logger = logging.getLogger(__name__)

DETECTOR_NAMES = ("harris", "shi_tomasi", "sift")
TRANSFORM_KINDS = ("rotation", "scale", "illumination")

# expected verdicts per detector, in TRANSFORM_KINDS order
EXPECTED_VERDICTS: Dict[str, Tuple[str, str, str]] = {
    "harris": ("Yes", "No", "No"),
    "shi_tomasi": ("Yes", "No", "No"),
    "sift": ("Yes", "Yes", "Yes"),
}

CSV_HEADER = ["detector", "transform_kind", "param", "repeated", "total", "ratio", "verdict"]
TEMPLATE_DIR = os.path.join(os.path.dirname(__file__), "templates")

Point = Tuple[float, float]


class Transform(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["rotation", "scale", "illumination"]
    angle: float = 0.0
    factor: float = 1.0
    gain: float = 1.0
    bias: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if not all(math.isfinite(v) for v in (self.angle, self.factor, self.gain, self.bias)):
            raise InvalidTransform("transform parameters must be finite")
        if self.kind == "scale" and self.factor <= 0:
            raise InvalidTransform(f"scale factor must be > 0, got {self.factor}")
        if self.kind == "illumination" and self.gain <= 0:
            raise InvalidTransform(f"gain must be > 0, got {self.gain}")
        return self

    @property
    def param(self) -> str:
        if self.kind == "rotation":
            return f"{self.angle:g}"
        if self.kind == "scale":
            return f"{self.factor:g}"
        return f"{self.gain:g}x{self.bias:+g}"

    def quarter_turns(self) -> Optional[int]:
        """Number of clockwise quarter turns, or None if the angle is not a multiple of 90."""
        q = self.angle / 90.0
        if abs(q - round(q)) > 1e-9:
            return None
        return int(round(q)) % 4


class RepeatabilityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    detector: Literal["harris", "shi_tomasi", "sift"]
    transform: Transform
    repeated: int = Field(ge=0)
    total: int = Field(ge=0)
    ratio: float = Field(ge=0, le=1)
    verdict: Literal["Yes", "No"]


def canonical_transforms(cfg: Optional[ProtocolConfig] = None) -> List[Transform]:
    cfg = cfg or ProtocolConfig()
    return [
        Transform(kind="rotation", angle=cfg.rotation_deg),
        Transform(kind="scale", factor=cfg.scale_factor),
        Transform(kind="illumination", gain=cfg.gain, bias=cfg.bias),
    ]


# ---------------- geometry ----------------
def warped_dims(t: Transform, dims: Tuple[int, int]) -> Tuple[int, int]:
    w, h = dims
    if t.kind == "scale":
        nw = int(math.floor(w * t.factor + 0.5))
        nh = int(math.floor(h * t.factor + 0.5))
        if nw < 1 or nh < 1:
            raise InvalidTransform(f"scale {t.factor} collapses a {w}x{h} image")
        return nw, nh
    if t.kind == "rotation" and t.quarter_turns() in (1, 3):
        return h, w
    return w, h


def map_points(t: Transform, pts, dims: Tuple[int, int]) -> np.ndarray:
    """Vectorised map_point over an (n, 2) array."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    w, h = dims
    nw, nh = warped_dims(t, dims)
    if t.kind == "illumination":
        return pts.copy()
    if t.kind == "scale":
        return np.column_stack([(x + 0.5) * nw / w - 0.5, (y + 0.5) * nh / h - 0.5])

    # clockwise as displayed (y down) about the image centre
    theta = math.radians(t.angle)
    q = t.quarter_turns()
    if q is not None:
        cos_t, sin_t = ((1, 0), (0, 1), (-1, 0), (0, -1))[q]
    else:
        cos_t, sin_t = math.cos(theta), math.sin(theta)
    dx, dy = x - (w - 1) / 2.0, y - (h - 1) / 2.0
    return np.column_stack([(nw - 1) / 2.0 + dx * cos_t - dy * sin_t,
                            (nh - 1) / 2.0 + dx * sin_t + dy * cos_t])


def map_point(t: Transform, pt: Point, dims: Tuple[int, int]) -> Point:
    x, y = map_points(t, [pt], dims)[0]
    return float(x), float(y)


def warp_image(img: GrayImage, t: Transform, exploratory: bool = False) -> GrayImage:
    """
    Rotation by multiples of 90 degrees is an exact pixel permutation; other
    angles are only accepted when `exploratory` and are sampled bilinearly
    (outside pixels read 0).
    """
    img = to_grayscale(img)
    w, h = img.width, img.height

    if t.kind == "illumination":
        return GrayImage(to_uint8(t.gain * img.pixels.astype(np.float64) + t.bias))

    if t.kind == "scale":
        nw, nh = warped_dims(t, (w, h))
        return GrayImage(to_uint8(resize_bilinear(img.pixels, nw, nh)))

    q = t.quarter_turns()
    if q is not None:
        return GrayImage(rotate90(img.pixels, q))
    if not exploratory:
        raise InvalidTransform(f"rotation by {t.angle} degrees is not lossless; use exploratory mode")

    # inverse map: destination pixel -> source coordinate
    theta = math.radians(t.angle)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - (w - 1) / 2.0, yy - (h - 1) / 2.0
    sx = (w - 1) / 2.0 + dx * math.cos(theta) + dy * math.sin(theta)
    sy = (h - 1) / 2.0 - dx * math.sin(theta) + dy * math.cos(theta)
    sampled = ndimage.map_coordinates(img.pixels.astype(np.float64), [sy, sx],
                                      order=1, mode="constant", cval=0.0)
    return GrayImage(to_uint8(sampled))


# ---------------- repeatability ----------------
def repeatability(kps_src: Sequence[Point], kps_dst: Sequence[Point], t: Transform,
                  dims: Tuple[int, int], tol_px: float = 3.0) -> Tuple[int, int, float]:
    """
    (repeated, total, ratio): a source point is repeated when some destination
    point lies within tol_px of its mapped location. Destination points may
    be claimed more than once.
    """
    if tol_px <= 0:
        raise ValueError(f"tol_px must be > 0, got {tol_px}")
    total = len(kps_src)
    if total == 0 or len(kps_dst) == 0:
        return 0, total, 0.0

    mapped = map_points(t, kps_src, dims)
    tree = cKDTree(np.asarray(kps_dst, dtype=np.float64).reshape(-1, 2))
    dist, _ = tree.query(mapped, k=1)
    repeated = int(np.count_nonzero(dist <= tol_px))
    return repeated, total, repeated / total


# ---------------- detectors ----------------
def _corner_points(img: GrayImage, detector: str, cfg) -> List[Point]:
    found = corners.detect_corners(corners.corner_response(img, detector, cfg), cfg)
    return [(c.x, c.y) for c in found]


def _detector_row(img: GrayImage, detector: str, settings: Settings,
                  transforms: Sequence[Transform], exploratory: bool) -> List[RepeatabilityReport]:
    proto = settings.protocol
    dims = (img.width, img.height)
    try:
        if detector == "sift":
            def extract(im, t=None):
                return [(k.x, k.y) for k in sift.detect_keypoints(im, settings.sift)]

            src = extract(img)
        else:
            ccfg = settings.corners
            response = corners.corner_response(img, detector, ccfg)
            src = [(c.x, c.y) for c in corners.detect_corners(response, ccfg)]
            fixed = ccfg.model_copy(update={
                "absolute_threshold": corners.relative_threshold(response, ccfg)})

            def extract(im, t=None):
                # illumination keeps the source's absolute threshold
                return _corner_points(im, detector, fixed if t is not None and t.kind == "illumination" else ccfg)
    except ImageTooSmall as e:
        raise InsufficientFeatures(f"{detector}: {e}") from e

    if len(src) < proto.min_keypoints:
        raise InsufficientFeatures(
            f"{detector} found {len(src)} keypoints, need at least {proto.min_keypoints}")

    reports = []
    for t in transforms:
        try:
            dst = extract(warp_image(img, t, exploratory), t)
        except ImageTooSmall:
            dst = []
        repeated, total, ratio = repeatability(src, dst, t, dims, proto.tol_px)
        verdict = "Yes" if ratio >= proto.verdict_ratio else "No"
        logger.info("%s %s %s: %d/%d repeated (%.3f) -> %s",
                    detector, t.kind, t.param, repeated, total, ratio, verdict)
        reports.append(RepeatabilityReport(detector=detector, transform=t, repeated=repeated,
                                           total=total, ratio=ratio, verdict=verdict))
    return reports


def invariance_matrix(img: RasterImage, settings: Optional[Settings] = None,
                      transforms: Optional[Sequence[Transform]] = None,
                      exploratory: bool = False, workers: int = 1) -> List[RepeatabilityReport]:
    """Detector x transform repeatability, ordered harris, shi_tomasi, sift."""
    settings = settings or Settings()
    transforms = list(transforms or canonical_transforms(settings.protocol))
    gray = to_grayscale(img)

    def run(detector: str):
        return _detector_row(gray, detector, settings, transforms, exploratory)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, DETECTOR_NAMES))
    else:
        rows = [run(d) for d in DETECTOR_NAMES]
    return [r for row in rows for r in row]


def verdict_pattern(reports: Sequence[RepeatabilityReport]) -> Dict[str, Tuple[str, ...]]:
    pattern: Dict[str, List[str]] = {}
    for r in reports:
        pattern.setdefault(r.detector, []).append(r.verdict)
    return {d: tuple(v) for d, v in pattern.items()}


def matches_expected(reports: Sequence[RepeatabilityReport]) -> bool:
    return verdict_pattern(reports) == EXPECTED_VERDICTS


# ---------------- output ----------------
def report_rows(reports: Sequence[RepeatabilityReport]) -> List[dict]:
    return [
        {
            "detector": r.detector,
            "transform_kind": r.transform.kind,
            "param": r.transform.param,
            "repeated": r.repeated,
            "total": r.total,
            "ratio": f"{r.ratio:.6g}",
            "verdict": r.verdict,
        }
        for r in reports
    ]


def write_report_csv(reports: Sequence[RepeatabilityReport], path: Union[str, Path]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_HEADER, lineterminator="\n")
            writer.writeheader()
            writer.writerows(report_rows(reports))
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def render_table(reports: Sequence[RepeatabilityReport]) -> str:
    env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), keep_trailing_newline=True)
    template = env.get_template("invariance_table.txt.j2")
    by_detector: Dict[str, Dict[str, RepeatabilityReport]] = {}
    for r in reports:
        by_detector.setdefault(r.detector, {})[r.transform.kind] = r
    return template.render(kinds=TRANSFORM_KINDS, rows=by_detector,
                           matches=matches_expected(reports))
