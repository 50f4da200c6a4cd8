"""Doubly periodic gridded fields, interpolation, and spectral operators.

Fields live on a uniform grid over a rectangle ``[x0,x1] x [y0,y1]`` with
periodic wrap in both axes. Arrays are shaped ``(nx, ny)`` with ``values[i, j]``
the sample at ``(x_i, y_j)``; stored row-major, so the y index varies fastest
in memory. Spatial interpolation is a true periodic cubic spline (B-spline
prefilter plus wrapped evaluation); temporal interpolation between stored
velocity frames is linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import OutOfRangeError, SolvabilityError

__all__ = [
    "Grid2D",
    "ScalarField2D",
    "VectorField2D",
    "VelocitySeries",
    "interp_velocity",
    "spectral_gradient",
    "spectral_divergence",
    "spectral_curl",
    "invert_laplacian_neg",
]


def _readonly(a, dtype=np.float64):
    out = np.ascontiguousarray(a, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic grid: nx x ny nodes covering [x0,x1) x [y0,y1)."""

    nx: int
    ny: int
    x0: float = 0.0
    x1: float = 2.0 * np.pi
    y0: float = 0.0
    y1: float = 2.0 * np.pi

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.nx}x{self.ny}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("domain must have positive extent")

    @property
    def lx(self):
        return self.x1 - self.x0

    @property
    def ly(self):
        return self.y1 - self.y0

    @property
    def dx(self):
        return self.lx / self.nx

    @property
    def dy(self):
        return self.ly / self.ny

    @property
    def x(self):
        """Node x coordinates, shape (nx,). The point x1 is the wrap image of x0."""
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def y(self):
        return self.y0 + self.dy * np.arange(self.ny)

    def mesh(self):
        """Node coordinate arrays (X, Y), each shaped (nx, ny)."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def wavenumbers(self):
        """Spectral wavenumbers (kx, ky) broadcastable to (nx, ny)."""
        kx = 2.0 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)
        ky = 2.0 * np.pi * np.fft.fftfreq(self.ny, d=self.dy)
        return kx[:, None], ky[None, :]

    def wavenumbers_deriv(self):
        """Like wavenumbers(), but with the Nyquist mode zeroed.

        Odd-order spectral derivative multipliers must drop the Nyquist mode
        to keep derivatives of real fields real on even-sized grids.
        """
        kx, ky = self.wavenumbers()
        kx = kx.copy()
        ky = ky.copy()
        if self.nx % 2 == 0:
            kx[self.nx // 2, 0] = 0.0
        if self.ny % 2 == 0:
            ky[0, self.ny // 2] = 0.0
        return kx, ky

    def wrap(self, points):
        """Map points into the fundamental domain [x0,x1) x [y0,y1)."""
        pts = np.asarray(points, dtype=np.float64)
        out = np.empty_like(pts)
        out[..., 0] = self.x0 + np.mod(pts[..., 0] - self.x0, self.lx)
        out[..., 1] = self.y0 + np.mod(pts[..., 1] - self.y0, self.ly)
        return out

    def index_coords(self, points):
        """Fractional node indices (ix, iy) for an array of points (..., 2)."""
        pts = np.asarray(points, dtype=np.float64)
        ix = (pts[..., 0] - self.x0) / self.dx
        iy = (pts[..., 1] - self.y0) / self.dy
        return ix, iy


def _check_field_values(grid, values, name):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.nx, grid.ny):
        raise ValueError(
            f"{name} shape {values.shape} does not match grid {(grid.nx, grid.ny)}"
        )
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite values")
    return values


@dataclass(frozen=True)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "values", _readonly(_check_field_values(self.grid, self.values, "values"))
        )
        object.__setattr__(self, "time", float(self.time))


@dataclass(frozen=True)
class VectorField2D:
    grid: Grid2D
    u: np.ndarray
    v: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "u", _readonly(_check_field_values(self.grid, self.u, "u")))
        object.__setattr__(self, "v", _readonly(_check_field_values(self.grid, self.v, "v")))
        object.__setattr__(self, "time", float(self.time))


# ---------------------------------------------------------------------------
# Spectral operators
# ---------------------------------------------------------------------------


def spectral_gradient(f: ScalarField2D) -> VectorField2D:
    """Gradient (df/dx, df/dy) via Fourier multipliers ik."""
    kx, ky = f.grid.wavenumbers_deriv()
    fh = np.fft.fft2(f.values)
    fx = np.fft.ifft2(1j * kx * fh).real
    fy = np.fft.ifft2(1j * ky * fh).real
    return VectorField2D(f.grid, fx, fy, f.time)


def spectral_divergence(v: VectorField2D) -> ScalarField2D:
    kx, ky = v.grid.wavenumbers_deriv()
    div = (
        np.fft.ifft2(1j * kx * np.fft.fft2(v.u)) + np.fft.ifft2(1j * ky * np.fft.fft2(v.v))
    ).real
    return ScalarField2D(v.grid, div, v.time)


def spectral_curl(v: VectorField2D) -> ScalarField2D:
    """Scalar vorticity dv/dx - du/dy."""
    kx, ky = v.grid.wavenumbers_deriv()
    w = (
        np.fft.ifft2(1j * kx * np.fft.fft2(v.v)) - np.fft.ifft2(1j * ky * np.fft.fft2(v.u))
    ).real
    return ScalarField2D(v.grid, w, v.time)


def invert_laplacian_neg(omega: ScalarField2D) -> ScalarField2D:
    """Stream function psi with -Laplacian(psi) = omega, zero-mean gauge.

    The periodic problem is solvable only for zero-mean omega; a mean above
    1e-8 of the field scale raises SolvabilityError.
    """
    vals = omega.values
    scale = np.max(np.abs(vals))
    mean = abs(np.mean(vals))
    if scale > 0 and mean > 1e-8 * scale:
        raise SolvabilityError(
            f"mean vorticity {mean:.3e} exceeds solvability tolerance for scale {scale:.3e}"
        )
    kx, ky = omega.grid.wavenumbers()
    k2 = kx**2 + ky**2
    wh = np.fft.fft2(vals - np.mean(vals))
    with np.errstate(divide="ignore", invalid="ignore"):
        ph = wh / k2
    ph[0, 0] = 0.0
    return ScalarField2D(omega.grid, np.fft.ifft2(ph).real, omega.time)


# ---------------------------------------------------------------------------
# Velocity series and interpolation
# ---------------------------------------------------------------------------


class VelocitySeries:
    """Uniformly sampled sequence of velocity frames on a shared grid.

    Immutable after construction; interpolation queries are reentrant. Spline
    coefficients for each frame are computed lazily and cached.
    """

    def __init__(self, grid: Grid2D, times, u, v):
        times = np.asarray(times, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("times must be a non-empty 1-D array")
        nt = times.size
        if u.shape != (nt, grid.nx, grid.ny) or v.shape != (nt, grid.nx, grid.ny):
            raise ValueError("velocity arrays must be shaped (nt, nx, ny)")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("velocity frames contain non-finite values")
        if nt >= 2:
            steps = np.diff(times)
            if np.any(steps <= 0):
                raise ValueError("frame times must be strictly increasing")
            dt = steps[0]
            if np.max(np.abs(steps - dt)) > 1e-12 * max(abs(dt), 1.0):
                raise ValueError("frame spacing must be uniform to 1e-12 relative")
        self.grid = grid
        self.times = _readonly(times)
        self._u = _readonly(u)
        self._v = _readonly(v)
        self._coeff_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @classmethod
    def from_frames(cls, frames):
        frames = list(frames)
        if not frames:
            raise ValueError("empty frame list")
        grid = frames[0].grid
        for f in frames:
            if f.grid != grid:
                raise ValueError("all frames must share one grid")
        times = [f.time for f in frames]
        u = np.stack([f.u for f in frames])
        v = np.stack([f.v for f in frames])
        return cls(grid, times, u, v)

    def __len__(self):
        return self.times.size

    @property
    def span(self):
        return float(self.times[0]), float(self.times[-1])

    @property
    def dt(self):
        if len(self) < 2:
            return 0.0
        return float(self.times[1] - self.times[0])

    def frame(self, i) -> VectorField2D:
        return VectorField2D(self.grid, self._u[i], self._v[i], float(self.times[i]))

    def frame_times_between(self, ta, tb):
        """Frame times strictly inside the open interval (min(ta,tb), max(ta,tb))."""
        lo, hi = min(ta, tb), max(ta, tb)
        sel = (self.times > lo) & (self.times < hi)
        return self.times[sel]

    def _coeff(self, i):
        cached = self._coeff_cache.get(i)
        if cached is None:
            cu = ndimage.spline_filter(self._u[i], order=3, mode="grid-wrap")
            cv = ndimage.spline_filter(self._v[i], order=3, mode="grid-wrap")
            cached = (cu, cv)
            self._coeff_cache[i] = cached
        return cached

    def _bracket(self, t):
        t0, t1 = self.span
        slack = 1e-9 * max(abs(t0), abs(t1), 1.0)
        if t < t0 - slack or t > t1 + slack:
            raise OutOfRangeError(f"time {t} outside series span [{t0}, {t1}]")
        if len(self) == 1:
            return 0, 0, 0.0
        k = int(np.clip(np.floor((t - t0) / self.dt), 0, len(self) - 2))
        theta = (t - self.times[k]) / self.dt
        return k, k + 1, float(np.clip(theta, 0.0, 1.0))

    def velocity_at(self, points, t):
        """Velocity at points (..., 2) and time t; periodic cubic in space,
        linear in time. Points may lie outside the fundamental domain."""
        k0, k1, theta = self._bracket(t)
        cu0, cv0 = self._coeff(k0)
        if theta == 0.0 or k0 == k1:
            cu, cv = cu0, cv0
        else:
            cu1, cv1 = self._coeff(k1)
            cu = (1.0 - theta) * cu0 + theta * cu1
            cv = (1.0 - theta) * cv0 + theta * cv1
        pts = np.asarray(points, dtype=np.float64)
        ix, iy = self.grid.index_coords(pts)
        coords = np.stack([np.ravel(ix), np.ravel(iy)])
        out = np.empty(pts.shape, dtype=np.float64)
        out[..., 0] = ndimage.map_coordinates(
            cu, coords, order=3, mode="grid-wrap", prefilter=False
        ).reshape(ix.shape)
        out[..., 1] = ndimage.map_coordinates(
            cv, coords, order=3, mode="grid-wrap", prefilter=False
        ).reshape(iy.shape)
        return out


def interp_velocity(series: VelocitySeries, x, t):
    """Velocity vector at a single point and time.

    Queries landing exactly on a grid node at a stored frame time return the
    stored sample bit-for-bit; everything else goes through the spline.
    """
    x = np.asarray(x, dtype=np.float64)
    series._bracket(t)  # span check
    g = series.grid
    frame_hits = np.nonzero(series.times == t)[0]
    if frame_hits.size:
        ix, iy = g.index_coords(x)
        i = int(np.round(ix)) % g.nx
        j = int(np.round(iy)) % g.ny
        # exact node hit: the query equals the node coordinate bit-for-bit
        if x[0] == g.x0 + g.dx * float(i) and x[1] == g.y0 + g.dy * float(j):
            k = int(frame_hits[0])
            return np.array([series._u[k, i, j], series._v[k, i, j]])
    return series.velocity_at(x[None, :], t)[0]
