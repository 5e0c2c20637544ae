# render.py — integer rasterisation for annotated output images
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from hygienefeat.errors import OutOfBounds

GREEN = (0, 255, 0)
RED = (255, 0, 0)
BLUE = (0, 0, 255)
YELLOW = (255, 255, 0)


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> List[Tuple[int, int]]:
    """Bresenham line, both endpoints included."""
    pixels = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        pixels.append((x, y))
        if x == x1 and y == y1:
            return pixels
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def circle_pixels(cx: int, cy: int, radius: int) -> List[Tuple[int, int]]:
    """Midpoint circle outline."""
    if radius <= 0:
        return [(cx, cy)]
    pixels = set()
    x, y, err = radius, 0, 1 - radius
    while x >= y:
        for px, py in ((x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)):
            pixels.add((cx + px, cy + py))
        y += 1
        if err < 0:
            err += 2 * y + 1
        else:
            x -= 1
            err += 2 * (y - x) + 1
    return sorted(pixels, key=lambda p: (p[1], p[0]))


def check_in_bounds(points: Iterable[Sequence[int]], width: int, height: int):
    for x, y in points:
        if not (0 <= x < width and 0 <= y < height):
            raise OutOfBounds(f"point ({x}, {y}) outside {width}x{height} image")


def paint(canvas: np.ndarray, pixels: Iterable[Tuple[int, int]], color) -> None:
    """Set pixels on an (h, w, 3) canvas; anything outside the canvas is clipped."""
    h, w = canvas.shape[:2]
    pts = np.array(list(pixels), dtype=np.int64).reshape(-1, 2)
    if not len(pts):
        return
    keep = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    pts = pts[keep]
    canvas[pts[:, 1], pts[:, 0]] = color


def square_pixels(cx: int, cy: int, half: int) -> List[Tuple[int, int]]:
    return [(cx + dx, cy + dy) for dy in range(-half, half + 1) for dx in range(-half, half + 1)]
