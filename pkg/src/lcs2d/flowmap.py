"""Particle advection, flow maps, Cauchy-Green tensors, FTLE, and
trajectory-type classification.

Trajectories integrate the interpolated velocity with adaptive RK4
(step-doubling). Internal coordinates are never wrapped, so finite
differences across the periodic seam stay clean; wrapping happens only on
output. Jacobians use four auxiliary particles per node at offsets
``+-delta`` along each axis, advected independently of the main grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StiffnessError
from .fields import Grid2D, ScalarField2D, VelocitySeries

__all__ = [
    "advect_particle",
    "advect_points",
    "compute_flow_map",
    "jacobian_aux_grid",
    "cauchy_green",
    "cauchy_green_field",
    "ftle",
    "mesoclassify",
    "FlowMapGrid",
    "CauchyGreenField",
    "MesoClassField",
]

DT_FLOOR = 1e-10
DEGENERACY_REL = 1e-10


def _advect_batch(series: VelocitySeries, pts, t0, t1, tol):
    """Integrate all points from t0 to t1 (either direction), unwrapped.

    One shared adaptive step for the whole batch, controlled by the worst
    particle; steps are clipped so they never straddle a stored frame time,
    where the linear-in-time velocity has a derivative kink.
    """
    x = np.array(pts, dtype=np.float64)
    if t0 == t1:
        return x
    lo, hi = series.span
    slack = 1e-9 * max(abs(lo), abs(hi), 1.0)
    if not (lo - slack <= t0 <= hi + slack and lo - slack <= t1 <= hi + slack):
        from .errors import OutOfRangeError

        raise OutOfRangeError(f"window [{t0}, {t1}] outside series span [{lo}, {hi}]")
    sgn = 1.0 if t1 > t0 else -1.0
    kinks = series.frame_times_between(t0, t1)
    if sgn < 0:
        kinks = kinks[::-1]
    kink_idx = 0
    span = abs(t1 - t0)
    dt_cur = min(span, series.dt if len(series) > 1 else span, 0.1)

    def vel(points, t):
        return series.velocity_at(points, t)

    def rk4(y, t, h):
        k1 = vel(y, t)
        k2 = vel(y + (0.5 * h) * k1, t + 0.5 * h)
        k3 = vel(y + (0.5 * h) * k2, t + 0.5 * h)
        k4 = vel(y + h * k3, t + h)
        return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    t = t0
    while abs(t1 - t) > 1e-12:
        remaining = abs(t1 - t)
        while kink_idx < kinks.size and abs(kinks[kink_idx] - t0) <= abs(t - t0) + 1e-12:
            kink_idx += 1
        if kink_idx < kinks.size:
            to_kink = abs(kinks[kink_idx] - t)
        else:
            to_kink = np.inf
        cap = min(remaining, to_kink)
        clipped = cap < dt_cur
        dt_try = cap if clipped else dt_cur
        while True:
            if dt_try < DT_FLOOR:
                raise StiffnessError("particle step size underflow")
            h = sgn * dt_try
            big = rk4(x, t, h)
            half = rk4(x, t, 0.5 * h)
            small = rk4(half, t + 0.5 * h, 0.5 * h)
            diff = small - big
            err = np.max(np.abs(diff)) / 15.0
            if err <= tol:
                x = small + diff / 15.0
                t = t + h
                if clipped and dt_try == cap:
                    dt_cur = max(dt_cur, 2.0 * dt_try if err < tol / 64.0 else dt_try)
                else:
                    dt_cur = 2.0 * dt_try if err < tol / 64.0 else dt_try
                break
            dt_try *= 0.5
            clipped = False
    return x


def advect_points(series, pts, t0, t1, tol=1e-8, wrap=False):
    """Batch trajectory endpoint for points (N, 2); backward windows allowed."""
    out = _advect_batch(series, pts, t0, t1, tol)
    return series.grid.wrap(out) if wrap else out


def advect_particle(series, x0, t0, t1, tol=1e-8):
    """Single trajectory endpoint, wrapped into the fundamental domain."""
    out = _advect_batch(series, np.asarray(x0, dtype=np.float64)[None, :], t0, t1, tol)
    return series.grid.wrap(out)[0]


@dataclass(frozen=True)
class FlowMapGrid:
    """Endpoint positions and deformation gradients over an initial grid."""

    grid: Grid2D
    a: float
    b: float
    fx: np.ndarray  # wrapped endpoint x, (nx, ny)
    fy: np.ndarray
    df: np.ndarray  # (nx, ny, 2, 2)
    delta: float

    def det(self):
        return (
            self.df[..., 0, 0] * self.df[..., 1, 1]
            - self.df[..., 0, 1] * self.df[..., 1, 0]
        )

    def trace(self):
        return self.df[..., 0, 0] + self.df[..., 1, 1]


def compute_flow_map(series, grid, a, b, delta=1e-3, tol=1e-8, chunk=16384) -> FlowMapGrid:
    """Flow map plus auxiliary-grid Jacobian on every node of ``grid``.

    Each node contributes five particles (itself and four satellites at
    ``+-delta`` per axis) advected independently. Fixed-size chunks keep the
    shared adaptive step local and the output deterministic.
    """
    if delta <= 0:
        raise ValueError("auxiliary grid distance must be positive")
    X, Y = grid.mesh()
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    n = nodes.shape[0]
    offsets = np.array(
        [[0.0, 0.0], [delta, 0.0], [-delta, 0.0], [0.0, delta], [0.0, -delta]]
    )
    finals = np.empty((5, n, 2))
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        batch = (nodes[sl, None, :] + offsets[None, :, :]).reshape(-1, 2)
        out = _advect_batch(series, batch, a, b, tol).reshape(-1, 5, 2)
        finals[:, sl, :] = np.moveaxis(out, 1, 0)
    main = series.grid.wrap(finals[0])
    df = np.empty((n, 2, 2))
    df[:, 0, 0] = (finals[1, :, 0] - finals[2, :, 0]) / (2.0 * delta)
    df[:, 1, 0] = (finals[1, :, 1] - finals[2, :, 1]) / (2.0 * delta)
    df[:, 0, 1] = (finals[3, :, 0] - finals[4, :, 0]) / (2.0 * delta)
    df[:, 1, 1] = (finals[3, :, 1] - finals[4, :, 1]) / (2.0 * delta)
    shape = (grid.nx, grid.ny)
    return FlowMapGrid(
        grid,
        float(a),
        float(b),
        main[:, 0].reshape(shape),
        main[:, 1].reshape(shape),
        df.reshape(shape + (2, 2)),
        float(delta),
    )


def jacobian_aux_grid(series, x0, a, b, delta=1e-3, tol=1e-8):
    """Deformation gradient at one point by the four-satellite stencil."""
    if delta <= 0:
        raise ValueError("auxiliary grid distance must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    sat = np.array(
        [
            x0 + [delta, 0.0],
            x0 - [delta, 0.0],
            x0 + [0.0, delta],
            x0 - [0.0, delta],
        ]
    )
    f = _advect_batch(series, sat, a, b, tol)
    return np.array(
        [
            [(f[0, 0] - f[1, 0]) / (2 * delta), (f[2, 0] - f[3, 0]) / (2 * delta)],
            [(f[0, 1] - f[1, 1]) / (2 * delta), (f[2, 1] - f[3, 1]) / (2 * delta)],
        ]
    )


def _symmetric_eig(c11, c12, c22, det_c):
    """Closed-form eigen-decomposition of symmetric 2x2 fields.

    Returns (l1, l2, xi1, xi2, degenerate). The small eigenvalue comes from
    det(C)/l2, which is far better conditioned than the subtraction form when
    the two eigenvalues are orders of magnitude apart.
    """
    mean = 0.5 * (c11 + c22)
    halfdiff = 0.5 * (c11 - c22)
    r = np.hypot(halfdiff, c12)
    l2 = mean + r
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = np.where(l2 > 0, det_c / np.where(l2 > 0, l2, 1.0), mean - r)
    degenerate = (l2 - l1) < DEGENERACY_REL * np.abs(l2)

    # eigenvector of l2: pick the better-conditioned column of (C - l1 I)
    v1 = np.stack([c12, l2 - c11], axis=-1)
    v2 = np.stack([l2 - c22, c12], axis=-1)
    n1 = np.linalg.norm(v1, axis=-1)
    n2 = np.linalg.norm(v2, axis=-1)
    xi2 = np.where((n1 >= n2)[..., None], v1, v2)
    norm = np.linalg.norm(xi2, axis=-1)
    ok = norm > 0
    xi2 = np.where(ok[..., None], xi2 / np.where(ok, norm, 1.0)[..., None], 0.0)
    canonical = np.zeros_like(xi2)
    canonical[..., 1] = 1.0
    xi2 = np.where(degenerate[..., None], canonical, xi2)

    flip = (xi2[..., 0] < 0) | ((xi2[..., 0] == 0) & (xi2[..., 1] < 0))
    xi2 = np.where(flip[..., None], -xi2, xi2)
    xi1 = np.stack([-xi2[..., 1], xi2[..., 0]], axis=-1)
    flip1 = (xi1[..., 0] < 0) | ((xi1[..., 0] == 0) & (xi1[..., 1] < 0))
    xi1 = np.where(flip1[..., None], -xi1, xi1)
    return l1, l2, xi1, xi2, degenerate


def cauchy_green(df):
    """Eigen-data of C = DF^T DF for a single 2x2 deformation gradient.

    Returns (l1, l2, xi1, xi2, degenerate) with l1 <= l2 and unit orthogonal
    eigenvectors; degenerate flags an isotropic tensor, for which the
    canonical basis is returned.
    """
    df = np.asarray(df, dtype=np.float64)
    if df.shape != (2, 2) or not np.all(np.isfinite(df)):
        raise ValueError("deformation gradient must be a finite 2x2 matrix")
    det_df = df[0, 0] * df[1, 1] - df[0, 1] * df[1, 0]
    if det_df == 0.0:
        raise ValueError("singular deformation gradient")
    c11 = df[0, 0] ** 2 + df[1, 0] ** 2
    c12 = df[0, 0] * df[0, 1] + df[1, 0] * df[1, 1]
    c22 = df[0, 1] ** 2 + df[1, 1] ** 2
    l1, l2, xi1, xi2, dg = _symmetric_eig(
        np.float64(c11), np.float64(c12), np.float64(c22), np.float64(det_df**2)
    )
    return float(l1), float(l2), xi1, xi2, bool(dg)


@dataclass(frozen=True)
class CauchyGreenField:
    """Per-node Cauchy-Green eigen-data over the initial grid of a window."""

    grid: Grid2D
    a: float
    b: float
    l1: np.ndarray
    l2: np.ndarray
    xi1: np.ndarray  # (nx, ny, 2)
    xi2: np.ndarray
    c11: np.ndarray
    c12: np.ndarray
    c22: np.ndarray
    degenerate: np.ndarray


def cauchy_green_field(fm: FlowMapGrid) -> CauchyGreenField:
    df = fm.df
    c11 = df[..., 0, 0] ** 2 + df[..., 1, 0] ** 2
    c12 = df[..., 0, 0] * df[..., 0, 1] + df[..., 1, 0] * df[..., 1, 1]
    c22 = df[..., 0, 1] ** 2 + df[..., 1, 1] ** 2
    det_c = fm.det() ** 2
    l1, l2, xi1, xi2, dg = _symmetric_eig(c11, c12, c22, det_c)
    return CauchyGreenField(fm.grid, fm.a, fm.b, l1, l2, xi1, xi2, c11, c12, c22, dg)


def cauchy_green_from_components(grid, a, b, c11, c12, c22) -> CauchyGreenField:
    """Cauchy-Green field from prescribed symmetric tensor components.

    Used for synthetic benchmark tensors that do not come from a flow map.
    """
    c11 = np.asarray(c11, dtype=np.float64)
    c12 = np.asarray(c12, dtype=np.float64)
    c22 = np.asarray(c22, dtype=np.float64)
    det_c = c11 * c22 - c12**2
    if np.any(det_c <= 0):
        raise ValueError("tensor components must be positive definite")
    l1, l2, xi1, xi2, dg = _symmetric_eig(c11, c12, c22, det_c)
    return CauchyGreenField(grid, float(a), float(b), l1, l2, xi1, xi2, c11, c12, c22, dg)


def ftle(cg: CauchyGreenField, a=None, b=None) -> ScalarField2D:
    """Largest finite-time stretching exponent log(l2) / (2 (b-a))."""
    a = cg.a if a is None else a
    b = cg.b if b is None else b
    if not b > a:
        raise ValueError("window must satisfy b > a")
    if np.any(cg.l2 <= 0):
        raise ValueError("non-positive largest eigenvalue")
    return ScalarField2D(cg.grid, np.log(cg.l2) / (2.0 * (b - a)), a)


@dataclass(frozen=True)
class MesoClassField:
    """Rotation- vs strain-type classification of the deformation gradient.

    ``elliptic`` is True where the (determinant-normalized) eigenvalues of DF
    are a complex pair on the unit circle; the discriminant is
    tr(DF)/sqrt(det DF), which reduces to the raw trace for det = 1.
    """

    grid: Grid2D
    elliptic: np.ndarray
    trace: np.ndarray
    disc: np.ndarray
    boundary: np.ndarray  # |disc| within 1e-9 of 2: classified elliptic, flagged
    det_deviation: np.ndarray  # |det - 1| > 5%: classification unreliable there


def mesoclassify(fm: FlowMapGrid, boundary_tol=1e-9, det_tol=0.05) -> MesoClassField:
    det = fm.det()
    tr = fm.trace()
    disc = tr / np.sqrt(np.abs(det))
    boundary = np.abs(np.abs(disc) - 2.0) <= boundary_tol
    elliptic = (np.abs(disc) < 2.0) | boundary
    det_dev = np.abs(det - 1.0) > det_tol
    return MesoClassField(fm.grid, elliptic, tr, disc, boundary, det_dev)
