#!/usr/bin/env python3
"""
Transforms, repeatability and the detector x transform verdict matrix
"""

import csv

import numpy as np
import pytest

from hygienefeat import synthetic
from hygienefeat.config import Settings
from hygienefeat.errors import InsufficientFeatures, InvalidTransform, IoFailure
from hygienefeat.imgcore import GrayImage
from hygienefeat.invariance import (
    EXPECTED_VERDICTS,
    RepeatabilityReport,
    Transform,
    canonical_transforms,
    invariance_matrix,
    map_point,
    matches_expected,
    render_table,
    repeatability,
    verdict_pattern,
    warp_image,
    write_report_csv,
)


@pytest.fixture
def small():
    return GrayImage(np.random.default_rng(4).integers(0, 256, (6, 9), dtype=np.uint8))


# ---------------- transforms ----------------
def test_trivial_warps_are_identity(small):
    assert warp_image(small, Transform(kind="rotation", angle=360)) == small
    assert warp_image(small, Transform(kind="rotation", angle=0)) == small
    assert warp_image(small, Transform(kind="illumination", gain=1.0, bias=0.0)) == small
    assert warp_image(small, Transform(kind="scale", factor=1.0)) == small


def test_quarter_turns_compose(small):
    r90 = Transform(kind="rotation", angle=90)
    twice = warp_image(warp_image(small, r90), r90)
    assert twice == warp_image(small, Transform(kind="rotation", angle=180))
    assert warp_image(small, Transform(kind="rotation", angle=-90)) == \
        warp_image(small, Transform(kind="rotation", angle=270))


def test_quarter_turn_preserves_intensity_multiset(small):
    out = warp_image(small, Transform(kind="rotation", angle=90))
    assert (out.width, out.height) == (small.height, small.width)
    assert sorted(out.pixels.ravel()) == sorted(small.pixels.ravel())


def test_quarter_turn_matches_map_point(small):
    t = Transform(kind="rotation", angle=90)
    out = warp_image(small, t)
    dims = (small.width, small.height)
    for x, y in [(0, 0), (8, 5), (3, 1)]:
        nx, ny = map_point(t, (x, y), dims)
        assert out.pixels[int(ny), int(nx)] == small.pixels[y, x]
    assert map_point(t, (2, 1), dims) == (small.height - 1 - 1, 2)


def test_arbitrary_angle_needs_exploratory_mode(small):
    t = Transform(kind="rotation", angle=30)
    with pytest.raises(InvalidTransform):
        warp_image(small, t)
    out = warp_image(small, t, exploratory=True)
    assert (out.width, out.height) == (small.width, small.height)


def test_scale_and_illumination():
    img = GrayImage(np.full((10, 20), 200, dtype=np.uint8))
    half = warp_image(img, Transform(kind="scale", factor=0.5))
    assert (half.width, half.height) == (10, 5)
    assert np.all(half.pixels == 200)
    bright = warp_image(img, Transform(kind="illumination", gain=1.3, bias=20))
    assert np.all(bright.pixels == 255)
    dim = warp_image(img, Transform(kind="illumination", gain=0.5, bias=0.4))
    assert np.all(dim.pixels == 100)


@pytest.mark.parametrize("kwargs", [
    {"kind": "scale", "factor": 0.0},
    {"kind": "scale", "factor": -2.0},
    {"kind": "illumination", "gain": 0.0},
    {"kind": "rotation", "angle": float("nan")},
])
def test_invalid_transforms(kwargs):
    with pytest.raises(InvalidTransform):
        Transform(**kwargs)


def test_scale_that_collapses_image():
    with pytest.raises(InvalidTransform):
        warp_image(GrayImage(np.zeros((4, 4), dtype=np.uint8)), Transform(kind="scale", factor=0.01))


def test_map_point_scale_and_identity():
    x, y = map_point(Transform(kind="scale", factor=2.0), (3, 4), (10, 10))
    assert abs(x - 6) <= 0.5 and abs(y - 8) <= 0.5
    assert map_point(Transform(kind="illumination", gain=2.0), (3.5, 1.0), (10, 10)) == (3.5, 1.0)
    assert map_point(Transform(kind="rotation", angle=360), (3.0, 4.0), (10, 7)) == (3.0, 4.0)


# ---------------- repeatability ----------------
def test_repeatability_exact_empty_and_half():
    t = Transform(kind="rotation", angle=90)
    dims = (50, 40)
    src = [(5.0, 5.0), (10.0, 20.0), (30.0, 2.0), (44.0, 39.0)]
    mapped = [map_point(t, p, dims) for p in src]
    assert repeatability(src, mapped, t, dims) == (4, 4, 1.0)
    assert repeatability(src, [], t, dims) == (0, 4, 0.0)
    assert repeatability(src, mapped[:2], t, dims) == (2, 4, 0.5)
    assert repeatability([], mapped, t, dims) == (0, 0, 0.0)


def test_repeatability_identity_and_monotone_tolerance():
    rng = np.random.default_rng(9)
    pts = [tuple(p) for p in rng.uniform(0, 100, (30, 2))]
    ident = Transform(kind="illumination")
    assert repeatability(pts, pts, ident, (100, 100))[2] == 1.0
    noisy = [(x + rng.normal(0, 3), y + rng.normal(0, 3)) for x, y in pts]
    ratios = [repeatability(pts, noisy, ident, (100, 100), tol)[2] for tol in (0.5, 1, 2, 3, 5, 10)]
    assert ratios == sorted(ratios)
    with pytest.raises(ValueError):
        repeatability(pts, pts, ident, (100, 100), 0)


def test_destination_points_may_be_claimed_twice():
    ident = Transform(kind="illumination")
    assert repeatability([(0, 0), (1, 0)], [(0.5, 0)], ident, (5, 5), 1.0) == (2, 2, 1.0)


# ---------------- reports ----------------
def _reports(pattern):
    out = []
    for detector, verdicts in pattern.items():
        for t, v in zip(canonical_transforms(), verdicts):
            out.append(RepeatabilityReport(detector=detector, transform=t, repeated=6 if v == "Yes" else 2,
                                           total=10, ratio=0.6 if v == "Yes" else 0.2, verdict=v))
    return out


def test_table_and_csv(tmp_path):
    reports = _reports(EXPECTED_VERDICTS)
    assert matches_expected(reports)
    assert verdict_pattern(reports) == EXPECTED_VERDICTS
    text = render_table(reports)
    assert "harris" in text and "illumination" in text
    assert text.strip().endswith("yes")

    path = tmp_path / "inv.csv"
    write_report_csv(reports, path)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 9
    assert rows[0] == {"detector": "harris", "transform_kind": "rotation", "param": "90",
                       "repeated": "6", "total": "10", "ratio": "0.6", "verdict": "Yes"}
    assert rows[-1]["param"] == "1.3x+20"


def test_mismatched_pattern_detected():
    pattern = dict(EXPECTED_VERDICTS, sift=("Yes", "No", "Yes"))
    assert not matches_expected(_reports(pattern))
    assert render_table(_reports(pattern)).strip().endswith("no")


def test_csv_to_unwritable_path(tmp_path):
    with pytest.raises(IoFailure):
        write_report_csv(_reports(EXPECTED_VERDICTS), tmp_path / "missing" / "inv.csv")


def test_tiny_image_has_insufficient_features():
    with pytest.raises(InsufficientFeatures):
        invariance_matrix(GrayImage(np.zeros((8, 8), dtype=np.uint8)))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1])
def test_canonical_texture_reproduces_expected_pattern(seed):
    img = synthetic.canonical_texture(seed=seed, size=512)
    reports = invariance_matrix(img, Settings())
    assert [(r.detector, r.transform.kind) for r in reports][:3] == [
        ("harris", "rotation"), ("harris", "scale"), ("harris", "illumination")]
    assert verdict_pattern(reports) == EXPECTED_VERDICTS
    assert all(r.total >= 10 for r in reports)


@pytest.mark.slow
def test_matrix_is_identical_with_worker_threads():
    img = synthetic.canonical_texture(seed=3, size=256)
    assert invariance_matrix(img, workers=3) == invariance_matrix(img, workers=1)
