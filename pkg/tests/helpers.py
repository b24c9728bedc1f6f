"""Fixture builders shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from facefake.core import BoundingBox, ImageBuffer

DARK, BRIGHT = 20, 230


def square_frame(seed: int, n_squares: int = 1, size: int = 200, side: int = 40):
    """Dark size x size frame with ``n_squares`` bright side x side squares, well apart.

    Returns the frame and the true squares as (x1, y1, x2, y2) arrays.
    """
    rng = np.random.default_rng(seed)
    frame = np.full((size, size, 3), DARK, np.uint8)
    frame = frame + rng.integers(0, 8, frame.shape).astype(np.uint8)
    squares = []
    while len(squares) < n_squares:
        x, y = rng.integers(4, size - side - 4, 2)
        cand = np.array([x, y, x + side, y + side], dtype=np.float64)
        # a full side of clearance keeps each square alone inside its own windows
        if all(max(cand[0] - s[2], s[0] - cand[2], cand[1] - s[3], s[1] - cand[3]) >= side for s in squares):
            squares.append(cand)
    for x1, y1, x2, y2 in squares:
        frame[int(y1):int(y2), int(x1):int(x2)] = BRIGHT
    return ImageBuffer(frame), squares


def random_boxes(rng: np.random.Generator, n: int, extent: float = 100.0) -> np.ndarray:
    xy = rng.uniform(0, extent, (n, 2))
    wh = rng.uniform(1, extent / 2, (n, 2))
    return np.column_stack([xy, xy + wh])


def as_boxes(arr: np.ndarray, scores) -> list[BoundingBox]:
    return [BoundingBox(*map(float, b), float(s)) for b, s in zip(arr, scores)]
