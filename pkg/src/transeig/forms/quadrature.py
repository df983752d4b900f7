"""Quadrature rules on triangles in barycentric coordinates."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,), sum to 1
    degree: int

    def physical_points(self, corners: np.ndarray) -> np.ndarray:
        """Quadrature points for triangles with corners (nt, 3, 2); shape (nt, nq, 2)."""
        return np.einsum("qi,tid->tqd", self.points, corners)


def _orbit(a):
    b = 1.0 - 2.0 * a
    return [[a, a, b], [a, b, a], [b, a, a]]


_A1, _W1 = 0.44594849091596488632, 0.22338158967801146570
_A2, _W2 = 0.09157621350977074346, 0.10995174365532186764

# Strang-Fix / Dunavant six-point rule, exact for polynomials of degree 4
DEGREE4 = QuadratureRule(
    np.array(_orbit(_A1) + _orbit(_A2)),
    np.array([_W1] * 3 + [_W2] * 3),
    4,
)
