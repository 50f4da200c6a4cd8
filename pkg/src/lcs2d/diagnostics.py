"""Instantaneous vortex criteria from Eulerian snapshots.

Includes the strain-minus-rotation parameter and its thresholded contours,
the acceleration-refined bounds built from material rates of strain and
vorticity, streamline-topography eddies, and a marching-squares contour
extractor that stitches across the periodic seams.

Velocity gradients default to spectral differentiation. Affine test flows
(solid rotation, pure strain) are not representable as periodic fields, so a
``centered`` finite-difference backend is available; it is exact for affine
data away from the seam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Point, Polygon
from shapely.validation import make_valid

from .errors import NumericError
from .fields import (
    ScalarField2D,
    VectorField2D,
    VelocitySeries,
    invert_laplacian_neg,
)

__all__ = [
    "OWField",
    "okubo_weiss",
    "ThresholdContours",
    "ow_threshold_contours",
    "HKField",
    "hua_klein",
    "EddyPatch",
    "streamline_eddies",
    "Contour",
    "extract_contours",
    "critical_points",
]


def _gradient(values, grid, method):
    if method == "spectral":
        kx, ky = grid.wavenumbers_deriv()
        fh = np.fft.fft2(values)
        return np.fft.ifft2(1j * kx * fh).real, np.fft.ifft2(1j * ky * fh).real
    if method == "centered":
        fx = (np.roll(values, -1, 0) - np.roll(values, 1, 0)) / (2.0 * grid.dx)
        fy = (np.roll(values, -1, 1) - np.roll(values, 1, 1)) / (2.0 * grid.dy)
        return fx, fy
    raise ValueError(f"unknown derivative method {method!r}")


def _strain_rotation(v: VectorField2D, method):
    """Normal strain, shear strain, and vorticity from one velocity frame."""
    ux, uy = _gradient(v.u, v.grid, method)
    vx, vy = _gradient(v.v, v.grid, method)
    return ux - vy, vx + uy, vx - uy


@dataclass(frozen=True)
class OWField:
    """Strain-squared minus rotation-squared, with its spatial deviation."""

    q: ScalarField2D
    sigma: float


def okubo_weiss(v: VectorField2D, method="spectral") -> OWField:
    sn, ss, w = _strain_rotation(v, method)
    q = sn**2 + ss**2 - w**2
    return OWField(ScalarField2D(v.grid, q, v.time), float(np.std(q)))


@dataclass(frozen=True)
class ThresholdContours:
    curves: list
    level: float
    degenerate_sigma: bool = False


def ow_threshold_contours(ow: OWField, alpha: float) -> ThresholdContours:
    """Closed contours at the level -alpha * sigma."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    vals = ow.q.values
    scale = max(np.max(np.abs(vals)), 1.0)
    if ow.sigma <= 1e-14 * scale:
        return ThresholdContours([], 0.0, degenerate_sigma=True)
    level = -alpha * ow.sigma
    if level <= np.min(vals) or level >= np.max(vals):
        return ThresholdContours([], level)
    curves = [c for c in extract_contours(ow.q, level) if c.closed]
    return ThresholdContours(curves, level)


@dataclass(frozen=True)
class HKField:
    """Acceleration-refined bounds: q/4 +- sqrt(|S_rate|^2 - |W_rate|^2)/2.

    Where the radicand is negative it is clamped to zero and flagged in
    ``clamped``; the bounds there are complex in exact arithmetic.
    """

    lam_plus: ScalarField2D
    lam_minus: ScalarField2D
    radicand: ScalarField2D
    clamped: np.ndarray


def hua_klein(series: VelocitySeries, t: float, method="spectral") -> HKField:
    """Bounds at an interior stored frame time.

    Material rates use a centered difference of the neighboring frames for
    the time part plus the spectral (or centered) advective term.
    """
    hits = np.nonzero(np.abs(series.times - t) <= 1e-9 * max(1.0, abs(t)))[0]
    if hits.size == 0:
        raise NumericError(f"time {t} is not a stored frame time")
    k = int(hits[0])
    if k == 0 or k == len(series) - 1:
        raise NumericError("rate terms need an interior frame (neighbors on both sides)")
    grid = series.grid
    frames = [series.frame(k - 1), series.frame(k), series.frame(k + 1)]
    comps = [_strain_rotation(f, method) for f in frames]
    dt2 = float(series.times[k + 1] - series.times[k - 1])
    mid = frames[1]
    rates = []
    for which in range(3):
        time_part = (comps[2][which] - comps[0][which]) / dt2
        gx, gy = _gradient(comps[1][which], grid, method)
        rates.append(time_part + mid.u * gx + mid.v * gy)
    sn, ss, w = comps[1]
    q = sn**2 + ss**2 - w**2
    radicand = rates[0] ** 2 + rates[1] ** 2 - rates[2] ** 2
    clamped = radicand < 0
    root = np.sqrt(np.where(clamped, 0.0, radicand))
    return HKField(
        ScalarField2D(grid, 0.25 * q + 0.5 * root, t),
        ScalarField2D(grid, 0.25 * q - 0.5 * root, t),
        ScalarField2D(grid, radicand, t),
        clamped,
    )


# ---------------------------------------------------------------------------
# Marching squares on the periodic grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Contour:
    vertices: np.ndarray  # unwrapped physical coordinates
    closed: bool

    def length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)))


# corner-occupancy case -> crossed edge pairs; corners a=(i,j) bit 1,
# b=(i+1,j) bit 2, c=(i+1,j+1) bit 4, d=(i,j+1) bit 8; edges S=a-b, E=b-c,
# N=d-c, W=a-d. Complementary cases share the same undirected pairs; saddle
# cases 5 and 10 are resolved by the cell-center value.
_CASES = {
    1: [("W", "S")],
    2: [("S", "E")],
    3: [("W", "E")],
    4: [("E", "N")],
    6: [("S", "N")],
    7: [("W", "N")],
    8: [("W", "N")],
    9: [("S", "N")],
    11: [("E", "N")],
    12: [("W", "E")],
    13: [("S", "E")],
    14: [("W", "S")],
}


def _edge_key(kind, i, j, nx, ny, periodic):
    if periodic:
        return (kind, i % nx, j % ny)
    return (kind, i, j)


def extract_contours(f: ScalarField2D, level: float, periodic: bool = True):
    """Marching squares with linear edge interpolation.

    With ``periodic`` the cells wrap; chains crossing the seam are unwrapped
    by shortest displacement, and a chain is ``closed`` only when its
    unwrapped endpoints coincide (a torus-wrapping chain stays open).
    """
    g = f.grid
    v = f.values
    if not np.all(np.isfinite(v)):
        raise ValueError("field contains non-finite values")
    nx, ny = g.nx, g.ny
    inside = v > level
    ni = nx if periodic else nx - 1
    nj = ny if periodic else ny - 1

    def val(i, j):
        return v[i % nx, j % ny]

    # fractional crossing position along an edge, in index coordinates
    def edge_pos(kind, i, j):
        if kind == "h":
            v0, v1 = val(i, j), val(i + 1, j)
            t = (level - v0) / (v1 - v0)
            return (i + t, float(j))
        v0, v1 = val(i, j), val(i, j + 1)
        t = (level - v0) / (v1 - v0)
        return (float(i), j + t)

    edge_of_cell = {
        "S": lambda i, j: ("h", i, j),
        "N": lambda i, j: ("h", i, j + 1),
        "W": lambda i, j: ("v", i, j),
        "E": lambda i, j: ("v", i + 1, j),
    }

    segments = {}  # edge key -> list of (other edge key, cell)
    for i in range(ni):
        for j in range(nj):
            code = (
                (1 if inside[i % nx, j % ny] else 0)
                | (2 if inside[(i + 1) % nx, j % ny] else 0)
                | (4 if inside[(i + 1) % nx, (j + 1) % ny] else 0)
                | (8 if inside[i % nx, (j + 1) % ny] else 0)
            )
            if code in (0, 15):
                continue
            if code in (5, 10):
                center = 0.25 * (val(i, j) + val(i + 1, j) + val(i, j + 1) + val(i + 1, j + 1))
                center_in = center > level
                if (code == 5) == center_in:
                    pairs = [("S", "E"), ("W", "N")]
                else:
                    pairs = [("W", "S"), ("E", "N")]
            else:
                pairs = _CASES[code]
            for e1, e2 in pairs:
                k1, a1, b1 = *edge_of_cell[e1](i, j),
                k2, a2, b2 = *edge_of_cell[e2](i, j),
                key1 = _edge_key(k1, a1, b1, nx, ny, periodic)
                key2 = _edge_key(k2, a2, b2, nx, ny, periodic)
                segments.setdefault(key1, []).append(key2)
                segments.setdefault(key2, []).append(key1)

    canonical = {}
    for key in segments:
        kind, i, j = key
        canonical[key] = edge_pos(kind, i, j)

    def unwrap_to(prev, key):
        px, py = canonical[key]
        if not periodic:
            return np.array([px, py])
        px = px - nx * np.round((px - prev[0]) / nx)
        py = py - ny * np.round((py - prev[1]) / ny)
        return np.array([px, py])

    visited = set()
    chains = []
    for start in sorted(segments):
        if start in visited or not segments[start]:
            continue
        # walk both directions from start
        chain = [np.array(canonical[start])]
        visited.add(start)
        ends = []
        for first in segments[start][:2]:
            path = []
            prev_key, cur = start, first
            pos = chain[0]
            while True:
                if cur in visited:
                    # closing back onto the start edge
                    if cur == start:
                        path.append(unwrap_to(pos, cur))
                    break
                pos = unwrap_to(pos, cur)
                path.append(pos)
                visited.add(cur)
                nbrs = [k for k in segments[cur] if k != prev_key]
                if not nbrs:
                    break
                prev_key, cur = cur, nbrs[0]
            ends.append(path)
        if len(ends) == 2 and ends[1]:
            chain = list(reversed(ends[1])) + chain + ends[0]
        else:
            chain = chain + ends[0]
        pts = np.array(chain)
        closed = pts.shape[0] > 2 and np.linalg.norm(pts[0] - pts[-1]) < 1e-9
        # to physical coordinates
        phys = np.column_stack([g.x0 + pts[:, 0] * g.dx, g.y0 + pts[:, 1] * g.dy])
        chains.append(Contour(phys, closed))
    return chains


# ---------------------------------------------------------------------------
# Streamline-topography eddies
# ---------------------------------------------------------------------------


def critical_points(psi: ScalarField2D, method="spectral"):
    """Sub-cell critical points of a periodic scalar, split by Hessian type.

    Returns (extrema, saddles); each entry is (position, value, hessian_det).
    """
    g = psi.grid
    px, py = _gradient(psi.values, g, method)
    pxx, pxy = _gradient(px, g, method)
    _, pyy = _gradient(py, g, method)

    def corners(a):
        return a, np.roll(a, -1, 0), np.roll(a, -1, 1), np.roll(np.roll(a, -1, 0), -1, 1)

    f00, f10, f01, f11 = corners(px)
    h00, h10, h01, h11 = corners(py)
    fmin = np.minimum(np.minimum(f00, f10), np.minimum(f01, f11))
    fmax = np.maximum(np.maximum(f00, f10), np.maximum(f01, f11))
    hmin = np.minimum(np.minimum(h00, h10), np.minimum(h01, h11))
    hmax = np.maximum(np.maximum(h00, h10), np.maximum(h01, h11))
    cand = (fmin <= 0) & (fmax >= 0) & (hmin <= 0) & (hmax >= 0)
    ii, jj = np.nonzero(cand)

    def bilin(a, i, j, s, t):
        return (
            a[i % g.nx, j % g.ny] * (1 - s) * (1 - t)
            + a[(i + 1) % g.nx, j % g.ny] * s * (1 - t)
            + a[i % g.nx, (j + 1) % g.ny] * (1 - s) * t
            + a[(i + 1) % g.nx, (j + 1) % g.ny] * s * t
        )

    extrema, saddles = [], []
    seen = []
    for i, j in zip(ii, jj):
        s = t = 0.5
        ok = True
        for _ in range(14):
            fv = bilin(px, i, j, s, t)
            hv = bilin(py, i, j, s, t)
            a1 = f10[i, j] - f00[i, j] + (f11[i, j] - f10[i, j] - f01[i, j] + f00[i, j]) * t
            a2 = f01[i, j] - f00[i, j] + (f11[i, j] - f10[i, j] - f01[i, j] + f00[i, j]) * s
            b1 = h10[i, j] - h00[i, j] + (h11[i, j] - h10[i, j] - h01[i, j] + h00[i, j]) * t
            b2 = h01[i, j] - h00[i, j] + (h11[i, j] - h10[i, j] - h01[i, j] + h00[i, j]) * s
            det = a1 * b2 - a2 * b1
            if abs(det) < 1e-300:
                ok = False
                break
            s -= (fv * b2 - a2 * hv) / det
            t -= (a1 * hv - fv * b1) / det
            if not (-0.5 <= s <= 1.5 and -0.5 <= t <= 1.5):
                ok = False
                break
        if not ok or not (-0.05 <= s <= 1.05 and -0.05 <= t <= 1.05):
            continue
        pos = np.array([g.x0 + (i + s) * g.dx, g.y0 + (j + t) * g.dy])
        pos = g.wrap(pos[None, :])[0]

        def _per_dist(p, q):
            d = np.abs(p - q)
            return np.hypot(min(d[0], g.lx - d[0]), min(d[1], g.ly - d[1]))

        if any(_per_dist(pos, q) < 0.5 * max(g.dx, g.dy) for q in seen):
            continue
        seen.append(pos)
        hxx = bilin(pxx, i, j, s, t)
        hxy = bilin(pxy, i, j, s, t)
        hyy = bilin(pyy, i, j, s, t)
        det_h = hxx * hyy - hxy**2
        value = float(bilin(psi.values, i, j, s, t))
        entry = (pos, value, float(det_h))
        if det_h < 0:
            saddles.append(entry)
        else:
            extrema.append(entry)
    return extrema, saddles


@dataclass(frozen=True)
class EddyPatch:
    boundary: np.ndarray  # closed polyline, unwrapped
    center: np.ndarray
    stream_value: float
    area: float


def _polygon_of(verts):
    poly = Polygon(verts)
    if not poly.is_valid:
        poly = make_valid(poly)
    return poly


def _closed_contour_around(psi, level, point, grid):
    for c in extract_contours(psi, level):
        if not c.closed:
            continue
        centroid = c.vertices[:-1].mean(axis=0) if c.vertices.shape[0] > 1 else c.vertices[0]
        shifted = point - np.array(
            [
                grid.lx * np.round((point[0] - centroid[0]) / grid.lx),
                grid.ly * np.round((point[1] - centroid[1]) / grid.ly),
            ]
        )
        if _polygon_of(c.vertices).contains(Point(shifted)):
            return c
    return None


def streamline_eddies(omega: ScalarField2D, level_tol=1e-4, max_iter=40):
    """Largest closed streamline around each stream-function extremum that
    encloses no saddle.

    The stream function comes from the negative inverse Laplacian of the
    vorticity; critical points are refined to sub-cell accuracy, and the
    limiting level is located by bisection on the saddle-enclosure predicate.
    """
    psi = invert_laplacian_neg(omega)
    extrema, saddles = critical_points(psi)
    if not extrema:
        return []
    g = omega.grid
    rng_lo = float(np.min(psi.values))
    rng_hi = float(np.max(psi.values))
    span = rng_hi - rng_lo
    if span <= 0:
        return []
    saddle_pts = [s[0] for s in saddles]

    def admissible(level, center):
        c = _closed_contour_around(psi, level, center, g)
        if c is None:
            return None
        poly = _polygon_of(c.vertices)
        centroid = c.vertices[:-1].mean(axis=0)
        for sp in saddle_pts:
            sp_shift = sp - np.array(
                [
                    g.lx * np.round((sp[0] - centroid[0]) / g.lx),
                    g.ly * np.round((sp[1] - centroid[1]) / g.ly),
                ]
            )
            if poly.contains(Point(sp_shift)):
                return None
        return c

    patches = []
    for pos, value, _ in extrema:
        far = rng_lo if value > rng_lo + 0.5 * span else rng_hi
        theta_good = 0.02
        contour = None
        for _ in range(8):  # make sure the inner bracket end is admissible
            c = admissible(value + theta_good * (far - value), pos)
            if c is not None:
                contour = c
                break
            theta_good *= 0.5
        if contour is None:
            continue
        theta_bad = 1.0
        for _ in range(max_iter):
            if theta_bad - theta_good <= level_tol:
                break
            mid = 0.5 * (theta_good + theta_bad)
            c = admissible(value + mid * (far - value), pos)
            if c is None:
                theta_bad = mid
            else:
                theta_good = mid
                contour = c
        level = value + theta_good * (far - value)
        area = abs(_polygon_of(contour.vertices).area)
        # shift the boundary into the periodic image nearest its extremum
        verts = contour.vertices.copy()
        centroid = verts[:-1].mean(axis=0)
        verts[:, 0] -= g.lx * np.round((centroid[0] - pos[0]) / g.lx)
        verts[:, 1] -= g.ly * np.round((centroid[1] - pos[1]) / g.ly)
        patches.append(EddyPatch(verts, pos, float(level), float(area)))
    return patches
