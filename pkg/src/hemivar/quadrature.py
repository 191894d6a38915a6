"""Quadrature rules on the reference tetrahedron and triangle."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# degree-2, 4-point rule; barycentric points, weights sum to 1 (multiply by volume)
_A = 0.5854101966249685
_B = 0.1381966011250105
TET4_BARY = np.array(
    [
        [_A, _B, _B, _B],
        [_B, _A, _B, _B],
        [_B, _B, _A, _B],
        [_B, _B, _B, _A],
    ]
)
TET4_WEIGHTS = np.full(4, 0.25)


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def tet_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed (conical product) Gauss rule exact for polynomials of total
    degree ``order``. Returns barycentric points (n, 4) and weights summing to 1."""
    n = max(1, (order + 3) // 2 + 1)
    t, w = _gauss01(n)
    pts, wts = [], []
    for a, wa in zip(t, w):
        for b, wb in zip(t, w):
            for c, wc in zip(t, w):
                x = a
                y = b * (1 - a)
                z = c * (1 - a) * (1 - b)
                pts.append((1 - x - y - z, x, y, z))
                wts.append(wa * wb * wc * (1 - a) ** 2 * (1 - b) * 6.0)
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def tri_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the triangle; barycentric points (n, 3), weights sum to 1."""
    n = max(1, (order + 2) // 2 + 1)
    t, w = _gauss01(n)
    pts, wts = [], []
    for a, wa in zip(t, w):
        for b, wb in zip(t, w):
            x = a
            y = b * (1 - a)
            pts.append((1 - x - y, x, y))
            wts.append(wa * wb * (1 - a) * 2.0)
    return np.array(pts), np.array(wts)
