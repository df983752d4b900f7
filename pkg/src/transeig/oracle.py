"""Exact transmission eigenvalues and eigenfunctions of the unit disk.

For ``A = a I`` and constant ``n`` the eigenfunctions separate in polar
coordinates::

    v = J_m(k r) cos(m t),   w = J_m(k) / J_m(k rho) * J_m(k rho r) cos(m t)

with ``rho = sqrt(n / a)``, and ``k`` is a root of the dispersion function
obtained from the flux condition ``a dw/dr = dv/dr`` on ``r = 1``.
Bessel functions are evaluated here (power series for small arguments,
Miller's backward recurrence otherwise).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .forms.quadrature import DEGREE4
from .geometry import TriMesh

Z_MAX = 60.0
M_MAX = 20
_SERIES_LIMIT = 6.0


def _series(m: int, z: np.ndarray) -> np.ndarray:
    h = 0.5 * z
    term = h**m / factorial(m)
    out = term.copy()
    h2 = h * h
    for k in range(1, 80):
        term = -term * h2 / (k * (k + m))
        out += term
        if np.all(np.abs(term) < 1e-18 * np.maximum(np.abs(out), 1e-300)):
            break
    return out


def _miller(m: int, z: np.ndarray) -> np.ndarray:
    """Backward recurrence J_{k-1} = (2k/z) J_k - J_{k+1}, normalised by J0 + 2 sum J_2k = 1."""
    zmax = float(np.max(z))
    start = int(max(m, zmax) + 25 + np.sqrt(40.0 * max(m, zmax)))
    start += start % 2
    jp1 = np.zeros_like(z)
    j = np.full_like(z, 1e-30)
    norm = np.zeros_like(z)
    want = np.zeros_like(z)
    for k in range(start, 0, -1):
        jm1 = (2.0 * k / z) * j - jp1
        jp1, j = j, jm1
        # j now holds J_{k-1}
        if k - 1 == m:
            want = j.copy()
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j
        big = np.abs(j) > 1e250
        if np.any(big):
            s = np.where(big, 1e-250, 1.0)
            j, jp1, norm, want = j * s, jp1 * s, norm * s, want * s
    norm += j  # J_0
    return want / norm


def bessel_j(m: int, z):
    """Bessel function of the first kind ``J_m(z)`` for integer ``0 <= m <= 20``, ``0 <= z <= 60``."""
    m = int(m)
    if m < 0 or m > M_MAX:
        raise ValueError(f"order m={m} outside supported range [0, {M_MAX}]")
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0) or np.any(z_arr > Z_MAX) or not np.all(np.isfinite(z_arr)):
        raise ValueError(f"argument outside supported range [0, {Z_MAX}]")
    flat = np.atleast_1d(z_arr).ravel()
    out = np.empty_like(flat)
    small = flat <= _SERIES_LIMIT
    if np.any(small):
        out[small] = _series(m, flat[small])
    if np.any(~small):
        out[~small] = _miller(m, flat[~small])
    out = out.reshape(z_arr.shape)
    return float(out) if out.ndim == 0 else out


def bessel_j_prime(m: int, z):
    """``dJ_m/dz``, via ``(J_{m-1} - J_{m+1}) / 2`` (``-J_1`` for m = 0)."""
    if m == 0:
        return -np.asarray(bessel_j(1, z)) if np.ndim(z) else -bessel_j(1, z)
    return 0.5 * (np.asarray(bessel_j(m - 1, z)) - np.asarray(bessel_j(m + 1, z)))


@dataclass(frozen=True)
class DiskParams:
    a: float = 2.0
    n: float = 8.0
    m_max: int = 8
    k_max: float = 10.0

    def __post_init__(self):
        if not (self.a > 0 and self.n > 0):
            raise ValueError("a and n must be positive")
        if self.m_max < 0 or self.m_max > M_MAX - 1 or self.k_max <= 0:
            raise ValueError("invalid m_max or k_max")

    @property
    def rho(self) -> float:
        return float(np.sqrt(self.n / self.a))


@dataclass(frozen=True)
class ExactMode:
    m: int
    k: float
    parity: str = "cos"
    multiplicity: int = 1

    def partner(self) -> "ExactMode":
        return ExactMode(self.m, self.k, "sin" if self.parity == "cos" else "cos", self.multiplicity)


def dispersion(k, m: int, params: DiskParams):
    """Flux-mismatch function whose positive zeros are the disk eigenvalues."""
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise ValueError("k must be positive")
    a, n = params.a, params.n
    kr = k * params.rho
    jm_k, jm1_k = bessel_j(m, k), bessel_j(m + 1, k)
    jm_kr, jm1_kr = bessel_j(m, kr), bessel_j(m + 1, kr)
    out = jm1_k * jm_kr - np.sqrt(n * a) * jm_k * jm1_kr + (a - 1) * (m / k) * jm_k * jm_kr
    return float(out) if np.ndim(out) == 0 else out


def _bisect(f, lo, hi, flo, tol=1e-12):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _golden_min(f, lo, hi, tol=1e-13):
    g = 0.5 * (np.sqrt(5.0) - 1.0)
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def disk_eigenvalues(params: DiskParams, step: float = 1e-3) -> list[ExactMode]:
    """Real roots in (0, k_max] for m = 0..m_max, sorted by k (one entry per parity)."""
    grid = np.arange(step, params.k_max + 0.5 * step, step)
    modes = []
    for m in range(params.m_max + 1):
        f = dispersion(grid, m, params)

        def fs(x, m=m):
            return dispersion(x, m, params)

        roots = []
        for i in np.nonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)[0]:
            roots.append(_bisect(fs, grid[i], grid[i + 1], f[i]))
        roots += [grid[i] for i in np.nonzero(f == 0)[0]]
        # touching roots: local minima of |f| without a sign change
        af = np.abs(f)
        for i in range(1, len(grid) - 1):
            if af[i] < 1e-6 and af[i] <= af[i - 1] and af[i] <= af[i + 1] and f[i - 1] * f[i + 1] > 0:
                x = _golden_min(lambda t: abs(fs(t)), grid[i - 1], grid[i + 1])
                if abs(fs(x)) <= 1e-10 and all(abs(x - r) > 10 * step for r in roots):
                    roots.append(x)
        mult = 1 if m == 0 else 2
        for r in sorted(roots):
            modes.append(ExactMode(m, float(r), "cos", mult))
            if m > 0:
                modes.append(ExactMode(m, float(r), "sin", mult))
    modes.sort(key=lambda md: (md.k, md.m, md.parity))
    return modes


def _polar(points):
    pts = np.asarray(points, dtype=float)
    r = np.hypot(pts[..., 0], pts[..., 1])
    t = np.arctan2(pts[..., 1], pts[..., 0])
    return pts, r, t


def _angular(mode, t):
    if mode.parity == "cos":
        return np.cos(mode.m * t), -mode.m * np.sin(mode.m * t)
    return np.sin(mode.m * t), mode.m * np.cos(mode.m * t)


def _amplitude(mode, params):
    den = bessel_j(mode.m, mode.k * params.rho)
    if abs(den) < 1e-13:
        raise ValueError(f"J_m(k rho) vanishes for mode {mode}; cannot normalise w")
    return bessel_j(mode.m, mode.k) / den


def exact_eigenfunction(mode: ExactMode, params: DiskParams, points):
    """Values ``(w, v)`` of the exact mode at points of shape (..., 2) with ``|x| <= 1``."""
    pts, r, t = _polar(points)
    if np.any(r > 1 + 1e-12):
        raise ValueError("points must lie in the closed unit disk")
    c = _amplitude(mode, params)
    ang, _ = _angular(mode, t)
    v = bessel_j(mode.m, mode.k * r) * ang
    w = c * bessel_j(mode.m, mode.k * params.rho * r) * ang
    return np.asarray(w), np.asarray(v)


def exact_gradient(mode: ExactMode, params: DiskParams, points):
    """Cartesian gradients of ``(w, v)``; each of shape (..., 2)."""
    pts, r, t = _polar(points)
    if np.any(r > 1 + 1e-12):
        raise ValueError("points must lie in the closed unit disk")
    c = _amplitude(mode, params)
    ang, dang = _angular(mode, t)
    cos_t, sin_t = np.cos(t), np.sin(t)
    safe_r = np.where(r > 0, r, 1.0)
    out = []
    for scale, kk in ((c, mode.k * params.rho), (1.0, mode.k)):
        f = scale * np.asarray(bessel_j(mode.m, kk * r))
        fr = scale * kk * np.asarray(bessel_j_prime(mode.m, kk * r))
        # (1/r) d/dt part; J_m(kr)/r is finite at r = 0 (only m = 1 contributes)
        f_over_r = np.where(r > 0, f / safe_r, 0.5 * scale * kk if mode.m == 1 else 0.0)
        gr = fr * ang
        gt = f_over_r * dang
        gx = gr * cos_t - gt * sin_t
        gy = gr * sin_t + gt * cos_t
        out.append(np.stack([gx, gy], axis=-1))
    return out[0], out[1]


def flux_mismatch(mode: ExactMode, params: DiskParams, theta) -> np.ndarray:
    """``a dw/dr - dv/dr`` on the unit circle at angles ``theta``."""
    theta = np.asarray(theta, dtype=float)
    pts = np.stack([np.cos(theta), np.sin(theta)], -1)
    gw, gv = exact_gradient(mode, params, pts)
    return params.a * np.sum(gw * pts, -1) - np.sum(gv * pts, -1)


def modes_for(k: float, modes: list[ExactMode], tol: float = 1e-6) -> list[ExactMode]:
    """Exact modes (both parities) whose root is nearest ``k``."""
    if not modes:
        raise ValueError("no exact modes available")
    best = min(modes, key=lambda md: abs(md.k - k))
    return [md for md in modes if md.m == best.m and abs(md.k - best.k) <= tol]


def eigenfunction_error(computed, modes: list[ExactMode], mesh: TriMesh, s: int,
                        params: DiskParams) -> dict:
    """Best-approximation error of each computed eigenfunction by the exact span.

    For every primal vector in the cluster and each component (w, v)
    separately, ``min_alpha || u_h - sum alpha_i u_i ||_s`` is evaluated by
    quadrature against the exact Bessel modes and their exact gradients on
    the mesh (L2 for s = 0, full H1 for s = 1).  Returns the sums over the
    cluster as ``{"w": ..., "v": ...}``.
    """
    if s not in (0, 1):
        raise ValueError("s must be 0 or 1")
    from .forms.assembly import barycentric_gradients

    q = DEGREE4
    corners = mesh.vertices[mesh.triangles]
    xq = q.physical_points(corners)  # (nt, nq, 2)
    wq = mesh.areas[:, None] * q.weights[None, :]

    exact_vals = [exact_eigenfunction(md, params, xq) for md in modes]
    exact_grads = [exact_gradient(md, params, xq) for md in modes] if s == 1 else None
    g = barycentric_gradients(mesh)
    tri = mesh.triangles
    dm = computed.dofmap
    Ew, Ev = dm.extract_w, dm.extract_v
    totals = {"w": 0.0, "v": 0.0}
    for col in range(computed.primal.shape[1]):
        U = computed.primal[:, col]
        for ci, (name, E) in enumerate((("w", Ew), ("v", Ev))):
            nodal = E @ U
            uq = np.einsum("qi,ti->tq", q.points, nodal[tri])
            sw = np.sqrt(wq)
            y = [(sw * uq).ravel()]
            M = [np.column_stack([(sw * ev[ci]).ravel() for ev in exact_vals])]
            if s == 1:
                duq = np.einsum("tid,ti->td", g, nodal[tri])
                for d in range(2):
                    y.append((sw * duq[:, None, d]).ravel())
                    M.append(np.column_stack([(sw * eg[ci][..., d]).ravel() for eg in exact_grads]))
            y = np.concatenate(y)
            M = np.vstack(M)
            if np.linalg.matrix_rank(M) < M.shape[1]:
                raise ValueError("degenerate exact span")
            alpha, *_ = np.linalg.lstsq(M, y, rcond=None)
            totals[name] += float(np.linalg.norm(y - M @ alpha))
    return totals
