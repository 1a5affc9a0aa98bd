"""Synthetic datasets: signed tetrahedron volumes in 3-D and an O(5)-invariant
regression target."""

from __future__ import annotations

import numpy as np

MIN_NORM = 1e-6


def signed_volume(points: np.ndarray) -> np.ndarray:
    """det[p1 - p0, p2 - p0, p3 - p0] / 6 for points of shape (..., 4, 3)."""
    points = np.asarray(points, dtype=float)
    edges = points[..., 1:, :] - points[..., :1, :]
    return np.linalg.det(np.swapaxes(edges, -1, -2)) / 6.0


def gen_signed_volume_dataset(count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    points = rng.normal(size=(count, 4, 3))
    return points, signed_volume(points)


def o5_target(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    n1 = np.linalg.norm(x1, axis=-1)
    n2 = np.linalg.norm(x2, axis=-1)
    return np.sin(n1) - n2**3 / 2.0 + np.sum(x1 * x2, axis=-1) / (n1 * n2)


def gen_o5_regression_dataset(count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Inputs of shape (count, 2, 5) with both vectors standard normal."""
    pairs = np.empty((count, 2, 5))
    filled = 0
    while filled < count:
        draw = rng.normal(size=(count - filled, 2, 5))
        ok = np.all(np.linalg.norm(draw, axis=-1) >= MIN_NORM, axis=-1)
        draw = draw[ok]
        pairs[filled:filled + len(draw)] = draw
        filled += len(draw)
    return pairs, o5_target(pairs[:, 0], pairs[:, 1])
