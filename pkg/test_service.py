#!/usr/bin/env python3
"""
HTTP service: /health, /detect/{command} and /invariance
"""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from hygienefeat import synthetic
from hygienefeat.imgcore import GrayImage, dumps_pnm
from main import app

client = TestClient(app)


def test_health():
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok", "commands": ["contour", "harris", "shi-tomasi", "sift"]}


def test_detect_harris():
    resp = client.post("/detect/harris", content=dumps_pnm(synthetic.white_square()))
    assert resp.status_code == 200
    assert len(resp.json()) == 4


def test_detect_with_query_override():
    body = dumps_pnm(synthetic.white_square())
    resp = client.post("/detect/harris", params={"corners.max_corners": "1"}, content=body)
    assert resp.status_code == 200
    assert len(resp.json()) == 1

    resp = client.post("/detect/harris", params={"corners.harris_k": "0.9"}, content=body)
    assert resp.status_code == 422
    assert resp.json()["kind"] == "ConfigError"


def test_detect_sift_includes_descriptors():
    resp = client.post("/detect/sift", content=dumps_pnm(synthetic.canonical_texture(seed=1, size=128)))
    assert resp.status_code == 200
    data = resp.json()
    assert len(data["descriptors"]) == len(data["keypoints"]) > 0


def test_bad_body_is_unprocessable():
    resp = client.post("/detect/contour", content=b"GIF89a not a pnm")
    assert resp.status_code == 422
    assert resp.json()["kind"] == "UnsupportedFormat"


def test_empty_image_is_unprocessable():
    resp = client.post("/detect/contour", content=dumps_pnm(GrayImage(np.zeros((10, 10), dtype=np.uint8))))
    assert resp.status_code == 422
    assert resp.json() == {"error": "no contours found", "kind": "EmptyInput"}


def test_unknown_command():
    resp = client.post("/detect/canny", content=b"")
    assert resp.status_code == 404
    assert "canny" in resp.json()["error"]


def test_invariance_rejects_tiny_texture():
    resp = client.post("/invariance", json={"texture_size": 16})
    assert resp.status_code == 422
    assert resp.json()["kind"] == "ConfigError"


@pytest.mark.slow
def test_invariance_on_default_texture():
    resp = client.post("/invariance", json={"seed": 0})
    assert resp.status_code == 200
    data = resp.json()
    assert data["matches_expected"] is True
    assert len(data["rows"]) == 9
    assert data["table"].strip().endswith("yes")
