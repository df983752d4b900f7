"""Material coefficients ``A(x)`` (symmetric 2x2) and ``n(x)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import Expr, parse_expr

CONDITIONS = ("gamma>1", "gamma<1")


@dataclass(frozen=True)
class CoefficientField:
    A11: Expr
    A12: Expr
    A22: Expr
    n: Expr
    condition: str = "gamma>1"
    gamma: float = 1.5
    name: str = "custom"

    @classmethod
    def from_strings(cls, A11, A12, A22, n, condition="gamma>1", gamma=1.5, name="custom"):
        if condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}, got {condition!r}")
        return cls(
            parse_expr(str(A11)), parse_expr(str(A12)), parse_expr(str(A22)),
            parse_expr(str(n)), condition, float(gamma), name,
        )

    def matrix(self, pts) -> np.ndarray:
        """A at points of shape (..., 2); returns (..., 2, 2)."""
        pts = np.asarray(pts, dtype=float)
        x1, x2 = pts[..., 0], pts[..., 1]
        a11, a12, a22 = self.A11(x1, x2), self.A12(x1, x2), self.A22(x1, x2)
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    def index(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return self.n(pts[..., 0], pts[..., 1])

    def check(self, domain: str, grid: int = 20) -> None:
        """Spot-check the sign condition on a grid of points inside ``domain``.

        Raises ValueError naming the first violated inequality.
        """
        pts = sample_points(domain, grid)
        eig = np.linalg.eigvalsh(self.matrix(pts))
        nval = self.index(pts)
        g = self.gamma
        if self.condition == "gamma>1":
            checks = [
                (g > 1, "gamma > 1"),
                (eig[:, 0].min() > g, "min eigenvalue of A > gamma"),
                (nval.min() > g, "n > gamma"),
            ]
        else:
            checks = [
                (0 < g < 1, "0 < gamma < 1"),
                (eig[:, 0].min() > 0, "A positive definite"),
                (eig[:, 1].max() < g, "max eigenvalue of A < gamma"),
                (nval.min() > 0 and nval.max() < g, "0 < n < gamma"),
            ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"coefficients {self.name!r} violate {what} on {domain}")


def sample_points(domain: str, grid: int = 20) -> np.ndarray:
    if domain == "unit-square":
        s = (np.arange(grid) + 0.5) / grid
        X, Y = np.meshgrid(s, s)
    elif domain == "L-shape":
        s = -1 + 2 * (np.arange(grid) + 0.5) / grid
        X, Y = np.meshgrid(s, s)
        keep = ~((X >= 0) & (Y <= 0))
        X, Y = X[keep], Y[keep]
    elif domain == "unit-disk":
        s = -1 + 2 * (np.arange(grid) + 0.5) / grid
        X, Y = np.meshgrid(s, s)
        keep = X**2 + Y**2 < 1
        X, Y = X[keep], Y[keep]
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return np.column_stack([np.ravel(X), np.ravel(Y)])


_PRESETS = {
    "disk-a2n8": dict(A11="2", A12="0", A22="2", n="8", condition="gamma>1", gamma=1.5),
    "square-cond2": dict(
        A11="2+x1^2", A12="x1*x2", A22="2+x2^2", n="4+2*(x1+x2)",
        condition="gamma>1", gamma=1.5,
    ),
    "square-cond3": dict(
        A11="1/2+x1^2/8", A12="x1*x2/8", A22="1/2+x2^2/8", n="1/4+(x1+x2)/8",
        condition="gamma<1", gamma=0.8,
    ),
    "lshape": dict(
        A11="2+x1^2", A12="x1*x2", A22="2+x2^2", n="2+abs(x1+x2)",
        condition="gamma>1", gamma=1.5,
    ),
}

PRESET_DOMAINS = {
    "disk-a2n8": "unit-disk",
    "square-cond2": "unit-square",
    "square-cond3": "unit-square",
    "lshape": "L-shape",
}


def preset(name: str) -> CoefficientField:
    try:
        spec = _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown coefficient preset {name!r}; known: {sorted(_PRESETS)}") from None
    return CoefficientField.from_strings(name=name, **spec)


def constant_field(a: float, n: float, condition: str = "gamma>1", gamma: float = 1.5):
    return CoefficientField.from_strings(
        repr(float(a)), "0", repr(float(a)), repr(float(n)), condition, gamma,
        name=f"A={a}I,n={n}",
    )
