# pipeline.py — manifests, frame sequences, stage segmentation, centroid tracking, detector runs
import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from hygienefeat import corners, invariance, segmentation, sift, synthetic
from hygienefeat.config import SegmentationConfig, Settings
from hygienefeat.errors import (
    EmptyInput,
    EmptyRegion,
    FrameLoadError,
    HeaderMismatch,
    HygieneFeatError,
    IoFailure,
    NotColorImage,
    RowParseError,
)
from hygienefeat.imgcore import RasterImage, load_pnm, save_pnm

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ["gender", "age", "profession", "country_of_origin", "skin_tone",
                   "video_size_mb", "video_length_s"]
TRACE_HEADER = ["frame", "cx", "cy", "has_hand"]
STAGES_HEADER = ["stage_index", "start_frame", "end_frame", "stage_name"]
FRAME_SUFFIXES = (".pgm", ".ppm", ".pnm")

WHO_STAGE_NAMES = (
    "Rub hands palm to palm",
    "Right palm over left dorsum with interlaced fingers and vice versa",
    "Palm to palm with fingers interlaced",
    "Backs of fingers to opposing palms with fingers interlocked",
    "Rotational rubbing of left thumb clasped in right palm and vice versa",
    "Rotational rubbing of clasped fingers in the opposite palm, backwards and forwards",
)

COMMANDS = ("contour", "harris", "shi-tomasi", "sift")


# ---------------- JSON ----------------
def round_sig(value: Any, digits: int = 6) -> Any:
    """Round every float in a JSON-like structure to `digits` significant digits."""
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return float(f"{value:.{digits}g}")
    if isinstance(value, (np.floating,)):
        return round_sig(float(value), digits)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {k: round_sig(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_sig(v, digits) for v in value]
    return value


def dumps_json(value: Any) -> str:
    return json.dumps(round_sig(value), indent=2, ensure_ascii=False) + "\n"


def write_json(value: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.write_text(dumps_json(value), encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    return path


def write_text(text: str, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    return path


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ---------------- manifest ----------------
class ParticipantRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    gender: str
    age: int = Field(gt=0)
    profession: str
    country_of_origin: str
    skin_tone: str
    video_size_mb: float = Field(gt=0)
    video_length_s: float = Field(gt=0)

    @field_validator("video_size_mb", "video_length_s")
    @classmethod
    def _finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v


def _strict_int(text: str, field: str) -> int:
    if not text or not (text.isdigit() or (text[0] in "+-" and text[1:].isdigit())):
        raise ValueError(f"{field}: expected an integer, got {text!r}")
    return int(text)


def _strict_float(text: str, field: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{field}: expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"{field}: expected a finite number, got {text!r}")
    return value


def parse_manifest(text: str) -> List[ParticipantRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
        raise HeaderMismatch(f"expected header {','.join(MANIFEST_HEADER)}, got {header!r}")

    records = []
    for row in reader:
        if not any(cell.strip() for cell in row):
            continue
        lineno = reader.line_num
        if len(row) != len(MANIFEST_HEADER):
            raise RowParseError(lineno, f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
        cells = dict(zip(MANIFEST_HEADER, (c.strip() for c in row)))
        try:
            cells["age"] = _strict_int(cells["age"], "age")
            cells["video_size_mb"] = _strict_float(cells["video_size_mb"], "video_size_mb")
            cells["video_length_s"] = _strict_float(cells["video_length_s"], "video_length_s")
            records.append(ParticipantRecord(**cells))
        except ValidationError as e:
            first = e.errors(include_url=False)[0]
            raise RowParseError(lineno, f"{first['loc'][0]}: {first['msg']}") from None
        except ValueError as e:
            raise RowParseError(lineno, str(e)) from None
    return records


def ingest_manifest(path: Union[str, Path]) -> List[ParticipantRecord]:
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except OSError as e:
        raise IoFailure(f"cannot read manifest {path}: {e}") from e
    records = parse_manifest(text)
    logger.info("📋 %d participant records from %s", len(records), path)
    return records


def manifest_csv(records: Sequence[ParticipantRecord]) -> str:
    return _csv_text(MANIFEST_HEADER, [[getattr(r, f) for f in MANIFEST_HEADER] for r in records])


def write_manifest(records: Sequence[ParticipantRecord], path: Union[str, Path]) -> Path:
    return write_text(manifest_csv(records), path)


# ---------------- frame sequences ----------------
class FrameSequence(BaseModel):
    model_config = ConfigDict(frozen=True)

    frames: List[Path]
    fps: float = Field(29.84, gt=0)

    @field_validator("frames")
    @classmethod
    def _not_empty(cls, v):
        if not v:
            raise ValueError("a frame sequence needs at least one frame")
        return v

    @classmethod
    def from_directory(cls, directory: Union[str, Path], fps: float = 29.84) -> "FrameSequence":
        directory = Path(directory)
        if not directory.is_dir():
            raise FrameLoadError(directory, "not a directory")
        frames = sorted((p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES),
                        key=lambda p: p.name)
        if not frames:
            raise FrameLoadError(directory, "no PNM frames found")
        return cls(frames=frames, fps=fps)


def load_frame(path: Union[str, Path]) -> RasterImage:
    try:
        return load_pnm(path)
    except HygieneFeatError as e:
        raise FrameLoadError(path, str(e)) from e


def _map_frames(fn: Callable[[Path], Any], frames: Sequence[Path], workers: int) -> List[Any]:
    """Apply fn per frame; results always come back in frame order."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, frames))
    return [fn(p) for p in frames]


# ---------------- stage segmentation ----------------
class StageSegment(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage_index: int = Field(ge=1, le=6)
    start_frame: int = Field(ge=0)
    end_frame: int = Field(ge=0)

    @property
    def stage_name(self) -> str:
        return WHO_STAGE_NAMES[self.stage_index - 1]


@dataclass(frozen=True)
class StageSegmentation:
    segments: List[StageSegment]
    dropped_runs: int = 0


def frame_activity(img: RasterImage, cfg: Optional[SegmentationConfig] = None) -> float:
    """Fraction of the frame classified as skin."""
    mask = segmentation.skin_mask(img, cfg)
    return mask.count() / float(img.width * img.height)


def segment_activity(active: Sequence[bool], min_pause_frames: int) -> List[Tuple[int, int]]:
    """
    Maximal runs of active frames; runs separated by fewer than
    min_pause_frames inactive frames are merged. Returns inclusive bounds.
    """
    runs: List[Tuple[int, int]] = []
    start = None
    for i, on in enumerate(active):
        if on and start is None:
            start = i
        elif not on and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(active) - 1))

    merged: List[Tuple[int, int]] = []
    for run in runs:
        if merged and run[0] - merged[-1][1] - 1 < min_pause_frames:
            merged[-1] = (merged[-1][0], run[1])
        else:
            merged.append(run)
    return merged


def segment_stages(seq: FrameSequence, area_fraction: float = 0.02, min_pause_frames: int = 15,
                   cfg: Optional[SegmentationConfig] = None, workers: int = 1) -> StageSegmentation:
    cfg = cfg or SegmentationConfig()

    def active(path: Path) -> bool:
        img = load_frame(path)
        try:
            return frame_activity(img, cfg) > area_fraction
        except NotColorImage as e:
            raise FrameLoadError(path, str(e)) from e

    flags = _map_frames(active, seq.frames, workers)
    runs = segment_activity(flags, min_pause_frames)
    dropped = max(len(runs) - len(WHO_STAGE_NAMES), 0)
    if dropped:
        logger.warning("⚠️ %d activity runs beyond the sixth were dropped", dropped)

    segments = [StageSegment(stage_index=i + 1, start_frame=s, end_frame=e)
                for i, (s, e) in enumerate(runs[:len(WHO_STAGE_NAMES)])]
    return StageSegmentation(segments=segments, dropped_runs=dropped)


def stages_csv(result: StageSegmentation) -> str:
    return _csv_text(STAGES_HEADER, [[s.stage_index, s.start_frame, s.end_frame, s.stage_name]
                                     for s in result.segments])


def render_stages(result: StageSegmentation, fps: float = 29.84) -> str:
    """Human-readable stage table with frame ranges and times in seconds."""
    env = Environment(loader=FileSystemLoader(invariance.TEMPLATE_DIR), keep_trailing_newline=True)
    return env.get_template("stages_summary.txt.j2").render(
        segments=result.segments, dropped_runs=result.dropped_runs, fps=fps)


# ---------------- centroid tracking ----------------
class CentroidSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    frame_index: int = Field(ge=0)
    cx: Optional[float] = None
    cy: Optional[float] = None

    @property
    def has_hand(self) -> bool:
        return self.cx is not None


class CentroidTrace(BaseModel):
    model_config = ConfigDict(frozen=True)

    samples: List[CentroidSample]
    fps: float = Field(29.84, gt=0)


class TraceSummary(BaseModel):
    frames: int
    hand_frames: int
    path_length_px: float
    mean_speed_px_s: float


def frame_centroid(img: RasterImage, cfg: Optional[SegmentationConfig] = None
                   ) -> Optional[segmentation.Centroid]:
    """Centroid of the largest skin blob (holes filled), or None when there is no hand."""
    cfg = cfg or SegmentationConfig()
    mask = segmentation.skin_mask(img, cfg)
    try:
        if cfg.use_full_mask:
            region = mask
        else:
            largest = segmentation.largest_contour(segmentation.find_contours(mask))
            region = segmentation.filled_region(mask, largest)
        return segmentation.centroid(segmentation.region_moments(region))
    except (EmptyInput, EmptyRegion):
        return None


def centroid_track(seq: FrameSequence, cfg: Optional[SegmentationConfig] = None,
                   workers: int = 1) -> CentroidTrace:
    cfg = cfg or SegmentationConfig()

    def track(path: Path) -> Optional[segmentation.Centroid]:
        img = load_frame(path)
        try:
            return frame_centroid(img, cfg)
        except NotColorImage as e:
            raise FrameLoadError(path, str(e)) from e

    found = _map_frames(track, seq.frames, workers)
    samples = [CentroidSample(frame_index=i, cx=c.cx, cy=c.cy) if c else CentroidSample(frame_index=i)
               for i, c in enumerate(found)]
    logger.info("🎯 hand found in %d of %d frames", sum(s.has_hand for s in samples), len(samples))
    return CentroidTrace(samples=samples, fps=seq.fps)


def trace_summary(trace: CentroidTrace) -> TraceSummary:
    """Path length over consecutive hand-present frames, and speed over the time they span."""
    length, steps = 0.0, 0
    for a, b in zip(trace.samples, trace.samples[1:]):
        if a.has_hand and b.has_hand:
            length += math.hypot(b.cx - a.cx, b.cy - a.cy)
            steps += 1
    speed = length / (steps / trace.fps) if steps else 0.0
    return TraceSummary(frames=len(trace.samples), hand_frames=sum(s.has_hand for s in trace.samples),
                        path_length_px=length, mean_speed_px_s=speed)


def trace_csv(trace: CentroidTrace) -> str:
    rows = [[s.frame_index,
             "" if s.cx is None else f"{s.cx:.6g}",
             "" if s.cy is None else f"{s.cy:.6g}",
             int(s.has_hand)] for s in trace.samples]
    return _csv_text(TRACE_HEADER, rows)


def plot_trace(trace: CentroidTrace, path: Union[str, Path]) -> Path:
    """Centroid x and y against time, gaps where no hand was found."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.array([s.frame_index / trace.fps for s in trace.samples])
    xs = np.array([np.nan if s.cx is None else s.cx for s in trace.samples])
    ys = np.array([np.nan if s.cy is None else s.cy for s in trace.samples])

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(t, xs, label="centroid x")
    ax.plot(t, ys, label="centroid y")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("pixels")
    ax.legend(loc="upper right")
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=100, metadata={"Software": None})
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    finally:
        plt.close(fig)
    return Path(path)


# ---------------- detector runs ----------------
def file_sha256(path: Union[str, Path]) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e


def detect(command: str, img: RasterImage, settings: Optional[Settings] = None
           ) -> Tuple[RasterImage, Union[Dict[str, Any], List[Dict[str, Any]]], Optional[List[List[float]]]]:
    """
    Run one detector command on an image.
    Returns (annotated image, JSON result, descriptor sidecar or None).
    Corner commands give a bare [{x, y, response}, ...] list.
    """
    settings = settings or Settings()
    if command == "contour":
        seg = segmentation.segment_hand(img, settings.segmentation)
        annotated = segmentation.draw_overlay(img, seg.largest, seg.hull)
        result = {
            "contour_count": len(seg.contours),
            "largest_contour": [list(p) for p in seg.largest.points],
            "area": segmentation.shoelace_area(seg.largest.points),
            "hull": [list(p) for p in seg.hull.vertices],
        }
        return annotated, result, None

    if command in ("harris", "shi-tomasi"):
        detector = command.replace("-", "_")
        found = corners.detect_corners(corners.corner_response(img, detector, settings.corners),
                                       settings.corners)
        result = [c.model_dump() for c in found]
        return corners.mark_corners(img, found), result, None

    if command == "sift":
        res = sift.detect_and_describe(img, settings.sift)
        result = {
            "keypoints": [k.model_dump(include={"x", "y", "sigma", "orientation", "response"})
                          for k in res.keypoints],
            "dropped": res.dropped,
        }
        sidecar = [d.values.tolist() for d in res.descriptors]
        return sift.draw_keypoints(img, res.keypoints), result, sidecar

    raise ValueError(f"unknown command {command!r}")


def run_detector(command: str, image_path: Union[str, Path], settings: Optional[Settings] = None,
                 out_dir: Union[str, Path] = ".") -> Dict[str, Path]:
    """Annotated PNM, result JSON and run metadata for one image; returns the written paths."""
    settings = settings or Settings()
    image_path = Path(image_path)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {out_dir}: {e}") from e

    img = load_pnm(image_path)
    logger.info("🔍 %s on %s (%dx%d)", command, image_path.name, img.width, img.height)
    annotated, result, sidecar = detect(command, img, settings)

    stem = f"{image_path.stem}_{command.replace('-', '_')}"
    suffix = ".ppm" if annotated.channels == 3 else ".pgm"
    paths = {"image": out_dir / f"{stem}{suffix}"}
    save_pnm(annotated, paths["image"])
    paths["result"] = write_json(result, out_dir / f"{stem}.json")
    if sidecar is not None:
        paths["descriptors"] = write_json(sidecar, out_dir / f"{stem}.descriptors.json")
    paths["run"] = write_json({
        "command": command,
        "input": image_path.name,
        "input_sha256": file_sha256(image_path),
        "config": settings.model_dump(),
    }, out_dir / f"{stem}.run.json")
    logger.info("✅ wrote %s", ", ".join(p.name for p in paths.values()))
    return paths


def match_images(path_a: Union[str, Path], path_b: Union[str, Path], settings: Optional[Settings] = None,
                 out_dir: Union[str, Path] = ".") -> Dict[str, Any]:
    """
    SIFT descriptors of both images matched with the configured ratio test;
    writes `<a>_<b>_match.json` and returns its content.
    """
    settings = settings or Settings()
    path_a, path_b = Path(path_a), Path(path_b)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {out_dir}: {e}") from e
    res_a = sift.detect_and_describe(load_pnm(path_a), settings.sift)
    res_b = sift.detect_and_describe(load_pnm(path_b), settings.sift)
    pairs = sift.match_descriptors(res_a.descriptors, res_b.descriptors, cfg=settings.sift)

    result = {
        "ratio": settings.sift.match_ratio,
        "keypoints_a": len(res_a.keypoints),
        "keypoints_b": len(res_b.keypoints),
        "matches": [
            {"a": i, "b": j,
             "xa": res_a.keypoints[i].x, "ya": res_a.keypoints[i].y,
             "xb": res_b.keypoints[j].x, "yb": res_b.keypoints[j].y,
             "distance": float(np.linalg.norm(res_a.descriptors[i].values - res_b.descriptors[j].values))}
            for i, j in pairs
        ],
    }
    write_json(result, out_dir / f"{path_a.stem}_{path_b.stem}_match.json")
    logger.info("🔗 %d of %d keypoints of %s matched in %s", len(pairs), len(res_a.keypoints),
                path_a.name, path_b.name)
    return result


def invariance_report(image_path: Optional[Union[str, Path]] = None, out_path: Union[str, Path] = "invariance.csv",
                      settings: Optional[Settings] = None, seed: int = 0,
                      workers: int = 1) -> Tuple[List[invariance.RepeatabilityReport], bool]:
    """
    Repeatability matrix for an image (or the seeded synthetic texture when
    image_path is None), written as CSV plus a text table next to it.
    """
    settings = settings or Settings()
    if image_path is None:
        img = synthetic.canonical_texture(seed, settings.protocol.texture_size)
        logger.info("🧪 synthetic texture seed=%d size=%d", seed, settings.protocol.texture_size)
    else:
        img = load_pnm(image_path)

    reports = invariance.invariance_matrix(img, settings, workers=workers)
    out_path = Path(out_path)
    invariance.write_report_csv(reports, out_path)
    table = invariance.render_table(reports)
    write_text(table, out_path.with_suffix(".txt"))
    matched = invariance.matches_expected(reports)
    logger.info("%s invariance pattern %s", "✅" if matched else "❌",
                "matches" if matched else "differs from expectation")
    return reports, matched
