#!/usr/bin/env python3
"""
Command-line entry point: subcommands, outputs and exit codes
"""

import json

import numpy as np
import pytest

from hygienefeat import synthetic
from hygienefeat.__main__ import build_parser, main
from hygienefeat.imgcore import GrayImage, save_pnm


@pytest.fixture
def square_pgm(tmp_path):
    path = tmp_path / "square.pgm"
    save_pnm(synthetic.white_square(), path)
    return path


def test_harris_on_white_square(tmp_path, square_pgm):
    out = tmp_path / "out"
    assert main(["harris", str(square_pgm), "-o", str(out)]) == 0
    result = json.loads((out / "square_harris.json").read_text())
    assert len(result) == 4
    assert (out / "square_harris.ppm").exists()
    assert (out / "square_harris.run.json").exists()


def test_contour_on_empty_image(tmp_path, capsys):
    path = tmp_path / "black.pgm"
    save_pnm(GrayImage(np.zeros((20, 20), dtype=np.uint8)), path)
    assert main(["contour", str(path), "-o", str(tmp_path / "out")]) == 1
    assert "no contours found" in capsys.readouterr().err


def test_missing_input_file(tmp_path, capsys):
    assert main(["sift", str(tmp_path / "nope.pgm"), "-o", str(tmp_path)]) == 1
    assert "❌" in capsys.readouterr().err


def test_usage_errors_exit_two(capsys):
    assert main(["canny", "x.pgm"]) == 2
    assert main([]) == 2
    assert main(["invariance-report"]) == 2
    assert main(["invariance-report", "img.pgm", "--synthetic"]) == 2


def test_bad_config_exits_two(tmp_path, square_pgm, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("corners.harris_k = 0.5\n")
    assert main(["harris", str(square_pgm), "-c", str(cfg), "-o", str(tmp_path)]) == 2
    cfg.write_text("corners.no_such_key = 1\n")
    assert main(["harris", str(square_pgm), "-c", str(cfg), "-o", str(tmp_path)]) == 2
    assert main(["harris", str(square_pgm), "-c", str(tmp_path / "none.cfg"), "-o", str(tmp_path)]) == 2


def test_config_file_changes_result(tmp_path, square_pgm):
    cfg = tmp_path / "few.cfg"
    cfg.write_text("# keep only the strongest\ncorners.max_corners = 2\n")
    assert main(["shi-tomasi", str(square_pgm), "-c", str(cfg), "-o", str(tmp_path)]) == 0
    result = json.loads((tmp_path / "square_shi_tomasi.json").read_text())
    assert len(result) == 2


def test_match_two_images(tmp_path):
    texture = synthetic.canonical_texture(seed=1, size=128)
    save_pnm(texture, tmp_path / "a.pgm")
    save_pnm(texture, tmp_path / "b.pgm")
    out = tmp_path / "out"
    assert main(["match", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm"), "-o", str(out)]) == 0
    result = json.loads((out / "a_b_match.json").read_text())
    assert result["ratio"] == 0.8
    assert result["matches"] and all(m["a"] == m["b"] for m in result["matches"])

    cfg = tmp_path / "strict.cfg"
    cfg.write_text("sift.match_ratio = 0.5\n")
    assert main(["match", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm"), "-c", str(cfg), "-o", str(out)]) == 0
    assert json.loads((out / "a_b_match.json").read_text())["ratio"] == 0.5
    assert main(["match", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm"), "--ratio", "1.5"]) == 2


def test_manifest(tmp_path):
    src = tmp_path / "people.csv"
    src.write_text("gender,age,profession,country_of_origin,skin_tone,video_size_mb,video_length_s\n"
                   "Male,29,Researcher,India,Brown,62.9,29\n")
    assert main(["manifest", str(src), "-o", str(tmp_path / "out")]) == 0
    (rec,) = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert rec["age"] == 29

    src.write_text("gender,age\n")
    assert main(["manifest", str(src), "-o", str(tmp_path / "out")]) == 1


def test_segment_stages(tmp_path):
    frames, truth = synthetic.burst_sequence()
    synthetic.write_sequence(frames, tmp_path / "frames")
    out = tmp_path / "out"
    assert main(["segment-stages", str(tmp_path / "frames"), "-o", str(out), "--workers", "2"]) == 0
    stages = json.loads((out / "stages.json").read_text())
    assert [(s["start_frame"], s["end_frame"]) for s in stages["segments"]] == truth
    assert stages["dropped_runs"] == 0
    assert (out / "stages.csv").read_text().count("\n") == 7
    assert "Stage" in (out / "stages.txt").read_text()


def test_centroid_track_outputs_are_reproducible(tmp_path):
    frames, _ = synthetic.burst_sequence(bursts=2, burst_frames=5, gap_frames=3)
    synthetic.write_sequence(frames, tmp_path / "frames")
    for name in ("a", "b"):
        assert main(["centroid-track", str(tmp_path / "frames"), "-o", str(tmp_path / name),
                     "--fps", "10", "--plot"]) == 0
    for name in ("centroid_trace.csv", "centroid_summary.json", "centroid_trace.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "centroid_summary.json").read_text())
    assert summary["frames"] == 13
    assert summary["hand_frames"] == 10


def test_frames_directory_missing(tmp_path, capsys):
    assert main(["segment-stages", str(tmp_path / "none"), "-o", str(tmp_path)]) == 1
    assert "not a directory" in capsys.readouterr().err


def test_parser_shares_common_flags():
    parser = build_parser()
    args = parser.parse_args(["invariance-report", "--synthetic", "--seed", "4", "-v"])
    assert args.synthetic and args.seed == 4 and args.verbose and args.image is None
    args = parser.parse_args(["sift", "a.pgm"])
    assert args.out == "." and args.config is None


@pytest.mark.slow
def test_invariance_report_synthetic(tmp_path, capsys):
    assert main(["invariance-report", "--synthetic", "-o", str(tmp_path)]) == 0
    printed = capsys.readouterr().out
    assert "Pattern matches expected table: yes" in printed
    assert (tmp_path / "invariance.csv").read_text().count("\n") == 10
