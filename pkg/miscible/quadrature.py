"""Symmetric Gaussian rules on the reference triangle (0,0), (1,0), (0,1).

Points are barycentric triples, weights sum to the reference area 1/2.
Tables are the standard fully symmetric positive-weight rules; degrees 3 and
7 are served by the next rule up.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np

from miscible.errors import UnsupportedDegree


@dataclass(frozen=True, eq=False)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def xy(self) -> np.ndarray:
        """Reference-triangle Cartesian coordinates of the points."""
        return self.points[:, 1:]

    def __len__(self) -> int:
        return len(self.weights)


def _orbit(*bary: float) -> list[tuple[float, float, float]]:
    seen = []
    for p in permutations(bary):
        if p not in seen:
            seen.append(p)
    return seen


def _rule(degree: int, groups: list[tuple[tuple[float, ...], float]]) -> QuadRule:
    points, weights = [], []
    for bary, w in groups:
        orbit = _orbit(*bary)
        points.extend(orbit)
        weights.extend([w] * len(orbit))
    # Tables are normalised to unit area
    return QuadRule(np.array(points), 0.5 * np.array(weights), degree)


def _radon7() -> QuadRule:
    s = np.sqrt(15.0)
    a1, a2 = (6.0 - s) / 21.0, (6.0 + s) / 21.0
    return _rule(
        5,
        [
            ((1 / 3, 1 / 3, 1 / 3), 9.0 / 40.0),
            ((a1, a1, 1.0 - 2.0 * a1), (155.0 - s) / 1200.0),
            ((a2, a2, 1.0 - 2.0 * a2), (155.0 + s) / 1200.0),
        ],
    )


def _dunavant6() -> QuadRule:
    a1, a2 = 0.44594849091596488632, 0.09157621350977074346
    return _rule(
        4,
        [
            ((a1, a1, 1.0 - 2.0 * a1), 0.22338158967801146570),
            ((a2, a2, 1.0 - 2.0 * a2), 0.10995174365532186764),
        ],
    )


def _dunavant12() -> QuadRule:
    a1, a2 = 0.24928674517091042129, 0.06308901449150222834
    b, c = 0.05314504984481694735, 0.31035245103378440542
    return _rule(
        6,
        [
            ((a1, a1, 1.0 - 2.0 * a1), 0.11678627572637936603),
            ((a2, a2, 1.0 - 2.0 * a2), 0.05084490637020681692),
            ((b, c, 1.0 - b - c), 0.08285107561837357519),
        ],
    )


def _dunavant16() -> QuadRule:
    a1, a2, a3 = 0.45929258829272315602, 0.17056930775176020662, 0.05054722831703097545
    b, c = 0.00839477740995760533, 0.26311282963463811342
    return _rule(
        8,
        [
            ((1 / 3, 1 / 3, 1 / 3), 0.14431560767778716825),
            ((a1, a1, 1.0 - 2.0 * a1), 0.09509163426728462479),
            ((a2, a2, 1.0 - 2.0 * a2), 0.10321737053471604657),
            ((a3, a3, 1.0 - 2.0 * a3), 0.03245849762319808031),
            ((b, c, 1.0 - b - c), 0.02723031417443499426),
        ],
    )


_BUILDERS = {
    1: lambda: _rule(1, [((1 / 3, 1 / 3, 1 / 3), 1.0)]),
    2: lambda: _rule(2, [((2 / 3, 1 / 6, 1 / 6), 1 / 3)]),
    3: _dunavant6,
    4: _dunavant6,
    5: _radon7,
    6: _dunavant12,
    7: _dunavant16,
    8: _dunavant16,
}


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    if degree not in _BUILDERS:
        raise UnsupportedDegree(degree)
    return _BUILDERS[degree]()


@lru_cache(maxsize=None)
def edge_rule(npoints: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1] (weights sum to 1)."""
    s, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (s + 1.0), 0.5 * w
