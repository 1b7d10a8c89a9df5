from __future__ import annotations

import numpy as np
import pytest


def ball_points(n: int, d: int, seed: int) -> np.ndarray:
    """Uniform points in the unit l2 ball, drawn with a plain numpy generator."""
    g = np.random.default_rng(seed)
    z = g.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * g.uniform(size=(n, 1)) ** (1.0 / d)


def cube_points(n: int, d: int, seed: int) -> np.ndarray:
    g = np.random.default_rng(seed)
    pts = g.uniform(-1.0, 1.0, size=(n, d))
    corners = np.array(np.meshgrid(*([[-1.0, 1.0]] * d))).reshape(d, -1).T
    return np.concatenate([corners, pts])


def loop_forward(layers, x) -> np.ndarray:
    """Straight-line evaluation with explicit loops, independent of the library."""
    h = [float(v) for v in x]
    for li, w in enumerate(layers):
        out = []
        for row in w:
            acc = 0.0
            for a, b in zip(row, h):
                acc += float(a) * b
            if li < len(layers) - 1:
                acc = acc if acc > 0 else 0.0
            out.append(acc)
        h = out
    return np.array(h)


@pytest.fixture
def rng_seed():
    return 20240611
