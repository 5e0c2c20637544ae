#!/usr/bin/env python3
"""
Manifest ingestion, stage segmentation, centroid tracking and detector runs
"""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from hygienefeat import pipeline, synthetic
from hygienefeat.config import SegmentationConfig, Settings, apply_overrides
from hygienefeat.errors import (
    FrameLoadError,
    HeaderMismatch,
    InsufficientFeatures,
    IoFailure,
    RowParseError,
)
from hygienefeat.imgcore import GrayImage, rotate90, save_pnm

HEADER = "gender,age,profession,country_of_origin,skin_tone,video_size_mb,video_length_s\n"


# ---------------- manifest ----------------
def test_manifest_example_row():
    (rec,) = pipeline.parse_manifest(HEADER + "Male,29,Researcher,India,Brown,62.9,29\n")
    assert rec.gender == "Male"
    assert rec.age == 29
    assert rec.country_of_origin == "India"
    assert rec.video_size_mb == 62.9
    assert rec.video_length_s == 29.0


def test_manifest_without_rows():
    assert pipeline.parse_manifest(HEADER) == []
    assert pipeline.parse_manifest(HEADER + "\n,,,,,,\n") == []


@pytest.mark.parametrize("row, expected_row", [
    ("Male,abc,Researcher,India,Brown,62.9,29\n", 2),
    ("Male,29,Researcher,India,Brown,big,29\n", 2),
    ("Male,0,Researcher,India,Brown,62.9,29\n", 2),
    ("Male,29,Researcher,India,Brown,62.9,-1\n", 2),
    ("Male,29,Researcher,India,Brown,62.9,inf\n", 2),
    ("Male,29,Researcher,India\n", 2),
])
def test_manifest_bad_rows(row, expected_row):
    with pytest.raises(RowParseError) as info:
        pipeline.parse_manifest(HEADER + row)
    assert info.value.row == expected_row
    assert str(info.value).startswith(f"row {expected_row}:")


def test_manifest_error_reports_later_rows():
    text = HEADER + "Male,29,Researcher,India,Brown,62.9,29\nFemale,2.5,Nurse,Kenya,Dark,10,30\n"
    with pytest.raises(RowParseError) as info:
        pipeline.parse_manifest(text)
    assert info.value.row == 3


@pytest.mark.parametrize("text", ["", "gender,age\n", "Gender,Age,Profession,Country,Skin,Size,Length\n"])
def test_manifest_header_mismatch(text):
    with pytest.raises(HeaderMismatch):
        pipeline.parse_manifest(text)


def test_manifest_ingest_and_rewrite(tmp_path):
    src = tmp_path / "participants.csv"
    src.write_text(HEADER + "Male,29,Researcher,India,Brown,62.9,29\n"
                   "Female,41,Nurse,Kenya,Dark,80.25,35.5\n", encoding="utf-8")
    records = pipeline.ingest_manifest(src)
    assert [r.age for r in records] == [29, 41]
    out = pipeline.write_manifest(records, tmp_path / "clean.csv")
    assert pipeline.parse_manifest(out.read_text(encoding="utf-8")) == records

    with pytest.raises(IoFailure):
        pipeline.ingest_manifest(tmp_path / "missing.csv")


# ---------------- stage segmentation ----------------
def test_segment_activity_runs_and_merging():
    flags = [False, True, True, False, False, True, False, False, False, True]
    assert pipeline.segment_activity(flags, 1) == [(1, 2), (5, 5), (9, 9)]
    assert pipeline.segment_activity(flags, 3) == [(1, 5), (9, 9)]
    assert pipeline.segment_activity(flags, 4) == [(1, 9)]
    assert pipeline.segment_activity([], 5) == []
    assert pipeline.segment_activity([True] * 4, 5) == [(0, 3)]


def _sequence(tmp_path, frames, fps=29.84):
    synthetic.write_sequence(frames, tmp_path / "frames")
    return pipeline.FrameSequence.from_directory(tmp_path / "frames", fps)


def test_six_bursts_give_six_stages(tmp_path):
    frames, truth = synthetic.burst_sequence()
    result = pipeline.segment_stages(_sequence(tmp_path, frames))
    assert [(s.start_frame, s.end_frame) for s in result.segments] == truth
    assert [s.stage_index for s in result.segments] == [1, 2, 3, 4, 5, 6]
    assert result.segments[0].stage_name == "Rub hands palm to palm"
    assert result.dropped_runs == 0

    csv_lines = pipeline.stages_csv(result).splitlines()
    assert csv_lines[0] == "stage_index,start_frame,end_frame,stage_name"
    assert csv_lines[1].startswith("1,0,19,")

    text = pipeline.render_stages(result, fps=20.0)
    assert text.splitlines()[1].split()[:3] == ["1", "0-19", "0.00-1.00"]
    assert "Rub hands palm to palm" in text
    assert "dropped" not in text


def test_black_sequence_has_no_stages(tmp_path):
    frames = [synthetic.skin_frame(32, 24) for _ in range(10)]
    result = pipeline.segment_stages(_sequence(tmp_path, frames))
    assert result.segments == []
    assert pipeline.render_stages(result).strip() == "No hand activity found."


def test_continuous_activity_is_one_stage(tmp_path):
    frames, _ = synthetic.burst_sequence(bursts=1, burst_frames=12)
    result = pipeline.segment_stages(_sequence(tmp_path, frames))
    assert [(s.stage_index, s.start_frame, s.end_frame) for s in result.segments] == [(1, 0, 11)]


def test_extra_runs_are_dropped(tmp_path):
    frames, truth = synthetic.burst_sequence(bursts=8, burst_frames=3, gap_frames=16, width=32, height=24, side=8)
    result = pipeline.segment_stages(_sequence(tmp_path, frames))
    assert len(result.segments) == 6
    assert result.dropped_runs == 2
    assert "2 activity run(s) after the sixth stage were dropped." in pipeline.render_stages(result)
    assert [(s.start_frame, s.end_frame) for s in result.segments] == truth[:6]


def test_short_pauses_are_merged(tmp_path):
    frames, truth = synthetic.burst_sequence(bursts=3, burst_frames=5, gap_frames=4, width=32, height=24, side=8)
    result = pipeline.segment_stages(_sequence(tmp_path, frames), min_pause_frames=5)
    assert [(s.start_frame, s.end_frame) for s in result.segments] == [(truth[0][0], truth[-1][1])]


def test_gray_frames_are_rejected(tmp_path):
    synthetic.write_sequence([synthetic.white_square()], tmp_path / "frames")
    seq = pipeline.FrameSequence.from_directory(tmp_path / "frames")
    with pytest.raises(FrameLoadError):
        pipeline.segment_stages(seq)


# ---------------- frame loading ----------------
def test_frame_sequence_errors(tmp_path):
    with pytest.raises(FrameLoadError):
        pipeline.FrameSequence.from_directory(tmp_path / "nope")
    (tmp_path / "notes.txt").write_text("not a frame")
    with pytest.raises(FrameLoadError):
        pipeline.FrameSequence.from_directory(tmp_path)
    with pytest.raises(ValidationError):
        pipeline.FrameSequence(frames=[])
    with pytest.raises(ValidationError):
        pipeline.FrameSequence(frames=[tmp_path / "a.ppm"], fps=0)


def test_corrupt_frame(tmp_path):
    bad = tmp_path / "frame_00000.ppm"
    bad.write_bytes(b"P6\n4 4\n255\n\x00\x01")
    with pytest.raises(FrameLoadError) as info:
        pipeline.load_frame(bad)
    assert info.value.path == str(bad)


def test_frames_sorted_by_name(tmp_path):
    for name in ("b.ppm", "a.ppm", "c.pgm"):
        save_pnm(GrayImage(np.zeros((2, 2), dtype=np.uint8)), tmp_path / name)
    seq = pipeline.FrameSequence.from_directory(tmp_path)
    assert [p.name for p in seq.frames] == ["a.ppm", "b.ppm", "c.pgm"]


# ---------------- centroids ----------------
def test_centroid_of_square():
    c = pipeline.frame_centroid(synthetic.skin_frame(64, 48, [(10, 12, 16)]))
    assert abs(c.cx - 17.5) <= 0.5
    assert abs(c.cy - 19.5) <= 0.5


def test_no_hand_in_black_frame():
    assert pipeline.frame_centroid(synthetic.skin_frame(32, 32)) is None


def test_largest_blob_wins_unless_full_mask():
    img = synthetic.skin_frame(80, 40, [(4, 4, 20), (60, 30, 6)])
    c = pipeline.frame_centroid(img)
    assert abs(c.cx - 13.5) <= 0.5 and abs(c.cy - 13.5) <= 0.5
    whole = pipeline.frame_centroid(img, SegmentationConfig(use_full_mask=True))
    assert whole.cx > c.cx


def test_centroid_track_and_workers(tmp_path):
    frames, truth = synthetic.burst_sequence(bursts=2, burst_frames=6, gap_frames=3)
    seq = _sequence(tmp_path, frames, fps=10.0)
    trace = pipeline.centroid_track(seq)
    assert len(trace.samples) == len(frames)
    present = [s.frame_index for s in trace.samples if s.has_hand]
    assert present == list(range(truth[0][0], truth[0][1] + 1)) + list(range(truth[1][0], truth[1][1] + 1))
    assert pipeline.centroid_track(seq, workers=4) == trace

    lines = pipeline.trace_csv(trace).splitlines()
    assert lines[0] == "frame,cx,cy,has_hand"
    assert lines[7] == "6,,,0"


def test_trace_summary():
    s = pipeline.CentroidSample
    trace = pipeline.CentroidTrace(fps=10.0, samples=[
        s(frame_index=0, cx=0.0, cy=0.0),
        s(frame_index=1, cx=3.0, cy=4.0),
        s(frame_index=2),
        s(frame_index=3, cx=3.0, cy=4.0),
        s(frame_index=4, cx=6.0, cy=8.0),
    ])
    summary = pipeline.trace_summary(trace)
    assert summary.frames == 5
    assert summary.hand_frames == 4
    assert summary.path_length_px == pytest.approx(10.0)
    assert summary.mean_speed_px_s == pytest.approx(50.0)

    empty = pipeline.trace_summary(pipeline.CentroidTrace(samples=[s(frame_index=0)]))
    assert empty.path_length_px == 0 and empty.mean_speed_px_s == 0


def test_plot_trace(tmp_path):
    s = pipeline.CentroidSample
    trace = pipeline.CentroidTrace(samples=[s(frame_index=i, cx=float(i), cy=2.0 * i) for i in range(5)])
    path = pipeline.plot_trace(trace, tmp_path / "trace.png")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


# ---------------- detector runs ----------------
@pytest.fixture
def square_pgm(tmp_path):
    path = tmp_path / "square.pgm"
    save_pnm(synthetic.white_square(), path)
    return path


def test_run_detector_harris(tmp_path, square_pgm):
    paths = pipeline.run_detector("harris", square_pgm, Settings(), tmp_path / "out")
    assert paths["image"].name == "square_harris.ppm"
    result = json.loads(paths["result"].read_text())
    assert isinstance(result, list) and len(result) == 4
    assert all(set(c) == {"x", "y", "response"} for c in result)
    assert all(isinstance(c["x"], int) and isinstance(c["y"], int) for c in result)
    run = json.loads(paths["run"].read_text())
    assert run["command"] == "harris"
    assert run["input_sha256"] == pipeline.file_sha256(square_pgm)
    assert run["config"]["corners"]["harris_k"] == 0.04
    assert "descriptors" not in paths


def test_run_detector_contour(tmp_path, square_pgm):
    paths = pipeline.run_detector("contour", square_pgm, out_dir=tmp_path / "out")
    result = json.loads(paths["result"].read_text())
    assert result["contour_count"] == 1
    assert result["area"] > 300
    assert len(result["hull"]) >= 4


def test_run_detector_sift_writes_descriptors(tmp_path):
    path = tmp_path / "texture.pgm"
    save_pnm(synthetic.canonical_texture(seed=1, size=128), path)
    paths = pipeline.run_detector("sift", path, out_dir=tmp_path / "out")
    result = json.loads(paths["result"].read_text())
    descriptors = json.loads(paths["descriptors"].read_text())
    assert len(descriptors) == len(result["keypoints"]) > 0
    assert all(len(d) == 128 for d in descriptors)


def test_run_detector_is_deterministic(tmp_path, square_pgm):
    a = pipeline.run_detector("shi-tomasi", square_pgm, out_dir=tmp_path / "a")
    b = pipeline.run_detector("shi-tomasi", square_pgm, out_dir=tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_match_images_uses_configured_ratio(tmp_path):
    texture = synthetic.canonical_texture(seed=1, size=128)
    a, b = tmp_path / "texture.pgm", tmp_path / "turned.pgm"
    save_pnm(texture, a)
    save_pnm(GrayImage(rotate90(texture.pixels, 1)), b)

    loose = pipeline.match_images(a, b, Settings(), tmp_path / "loose")
    strict = pipeline.match_images(a, b, apply_overrides(Settings(), {"sift.match_ratio": 0.3}),
                                   tmp_path / "strict")
    assert loose["ratio"] == 0.8 and strict["ratio"] == 0.3
    assert loose["matches"]
    assert {(m["a"], m["b"]) for m in strict["matches"]} <= {(m["a"], m["b"]) for m in loose["matches"]}
    written = json.loads((tmp_path / "loose" / "texture_turned_match.json").read_text())
    assert len(written["matches"]) == len(loose["matches"])
    assert written["keypoints_a"] == loose["keypoints_a"] > 0


def test_match_image_with_itself(tmp_path):
    path = tmp_path / "texture.pgm"
    save_pnm(synthetic.canonical_texture(seed=1, size=128), path)
    result = pipeline.match_images(path, path, out_dir=tmp_path)
    assert all(m["a"] == m["b"] and m["distance"] == 0 for m in result["matches"])
    assert len(result["matches"]) >= 0.9 * result["keypoints_a"]


def test_unknown_command():
    with pytest.raises(ValueError):
        pipeline.detect("canny", synthetic.white_square())


def test_invariance_report_on_tiny_image(tmp_path):
    path = tmp_path / "tiny.pgm"
    save_pnm(GrayImage(np.zeros((8, 8), dtype=np.uint8)), path)
    with pytest.raises(InsufficientFeatures):
        pipeline.invariance_report(path, tmp_path / "inv.csv")


def test_round_sig():
    assert pipeline.round_sig(1 / 3) == 0.333333
    assert pipeline.round_sig(float("nan")) is None
    assert pipeline.round_sig({"a": [np.float32(2.5), np.int64(3), True, "x"]}) == {"a": [2.5, 3, True, "x"]}
    assert pipeline.dumps_json({"v": 123456789.0}) == '{\n  "v": 123457000.0\n}\n'
