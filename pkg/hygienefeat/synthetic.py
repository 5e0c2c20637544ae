# synthetic.py — seeded test images and frame sequences with known ground truth
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from hygienefeat.imgcore import GrayImage, RasterImage, save_pnm, to_uint8

SKIN_RGB = (200, 150, 120)

BACKGROUND = 92.0
BLOB_COUNT = 150
BLOB_SIGMA = (4.0, 12.0)
BLOB_AMPLITUDE = (70.0, 100.0)
TEXTURE_RANGE = (10.0, 175.0)

CHECKER_CELLS = 8
CHECKER_CELL_PX = 10
CHECKER_LEVELS = (190.0, 245.0)
CHECKER_JITTER = 5.0


def canonical_texture(seed: int = 0, size: int = 512) -> GrayImage:
    """
    Multi-scale blob field plus one bright checker patch.

    The blob field stays inside TEXTURE_RANGE so a gain/bias of 1.3/20 does
    not clip it; the checker patch sits above that range and saturates.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    field = np.full((size, size), BACKGROUND)

    for _ in range(BLOB_COUNT):
        cx, cy = rng.uniform(0, size, 2)
        sigma = rng.uniform(*BLOB_SIGMA)
        amp = rng.uniform(*BLOB_AMPLITUDE) * rng.choice((-1.0, 1.0))
        r = int(np.ceil(4 * sigma))
        y0, y1 = max(int(cy) - r, 0), min(int(cy) + r + 1, size)
        x0, x1 = max(int(cx) - r, 0), min(int(cx) + r + 1, size)
        if y0 >= y1 or x0 >= x1:
            continue
        d2 = (xx[y0:y1, x0:x1] - cx) ** 2 + (yy[y0:y1, x0:x1] - cy) ** 2
        field[y0:y1, x0:x1] += amp * np.exp(-d2 / (2 * sigma * sigma))
    field = np.clip(field, *TEXTURE_RANGE)

    cells = min(CHECKER_CELLS, size // (2 * CHECKER_CELL_PX))
    span = cells * CHECKER_CELL_PX
    px, py = rng.integers(span // 2, size - span - span // 2 + 1, 2)
    for j in range(cells):
        for i in range(cells):
            level = CHECKER_LEVELS[(i + j) % 2] + rng.uniform(-CHECKER_JITTER, CHECKER_JITTER)
            ys = py + j * CHECKER_CELL_PX
            xs = px + i * CHECKER_CELL_PX
            field[ys:ys + CHECKER_CELL_PX, xs:xs + CHECKER_CELL_PX] = level
    return GrayImage(to_uint8(field))


def white_square(size: int = 60, side: int = 20) -> GrayImage:
    """A centred white square on black; corners at (o, o) .. (o+side-1, o+side-1)."""
    pixels = np.zeros((size, size), dtype=np.uint8)
    o = (size - side) // 2
    pixels[o:o + side, o:o + side] = 255
    return GrayImage(pixels)


def square_corners(size: int = 60, side: int = 20) -> List[Tuple[int, int]]:
    o = (size - side) // 2
    e = o + side - 1
    return [(o, o), (e, o), (o, e), (e, e)]


def gaussian_blob(size: int = 128, sigma: float = 4.0, amplitude: float = 200.0) -> GrayImage:
    c = size // 2
    yy, xx = np.mgrid[0:size, 0:size]
    field = amplitude * np.exp(-((xx - c) ** 2 + (yy - c) ** 2) / (2 * sigma * sigma))
    return GrayImage(to_uint8(field))


def step_edge(width: int = 64, height: int = 64, low: int = 40, high: int = 200,
              vertical: bool = True) -> GrayImage:
    pixels = np.full((height, width), low, dtype=np.uint8)
    if vertical:
        pixels[:, width // 2:] = high
    else:
        pixels[height // 2:, :] = high
    return GrayImage(pixels)


def skin_frame(width: int, height: int, squares=()) -> RasterImage:
    """Black RGB frame with skin-coloured squares given as (x, y, side)."""
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    for x, y, side in squares:
        pixels[y:y + side, x:x + side] = SKIN_RGB
    return RasterImage(pixels)


def burst_sequence(bursts: int = 6, burst_frames: int = 20, gap_frames: int = 20,
                   width: int = 64, height: int = 48, side: int = 16
                   ) -> Tuple[List[RasterImage], List[Tuple[int, int]]]:
    """
    `bursts` runs of frames with a moving skin square, separated by black
    frames. Returns the frames and each burst's (first, last) frame index.
    """
    frames: List[RasterImage] = []
    truth: List[Tuple[int, int]] = []
    travel = max(width - side, 1)
    for b in range(bursts):
        if b:
            frames.extend(skin_frame(width, height) for _ in range(gap_frames))
        start = len(frames)
        for i in range(burst_frames):
            x = (i * 3) % travel
            frames.append(skin_frame(width, height, [(x, (height - side) // 2, side)]))
        truth.append((start, len(frames) - 1))
    return frames, truth


def write_sequence(frames: List[RasterImage], directory: Union[str, Path]) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = directory / f"frame_{i:05d}.{'ppm' if frame.channels == 3 else 'pgm'}"
        save_pnm(frame, path)
        paths.append(path)
    return paths
