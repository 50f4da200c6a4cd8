"""Shared builders for analytic and random test fields."""

import numpy as np

from lcs2d.fields import Grid2D, ScalarField2D, VectorField2D, VelocitySeries


def grid(n=64, length=2.0 * np.pi):
    return Grid2D(n, n, 0.0, length, 0.0, length)


def scalar_from(g, fn, time=0.0):
    X, Y = g.mesh()
    return ScalarField2D(g, fn(X, Y), time)


def vector_from(g, fn_u, fn_v, time=0.0):
    X, Y = g.mesh()
    return VectorField2D(g, fn_u(X, Y), fn_v(X, Y), time)


def steady_series(g, fn_u, fn_v, t0=0.0, t1=1.0, nframes=6):
    """Series of identical frames sampling a steady analytic velocity."""
    times = np.linspace(t0, t1, nframes)
    X, Y = g.mesh()
    u = np.broadcast_to(fn_u(X, Y), (nframes, g.nx, g.ny)).copy()
    v = np.broadcast_to(fn_v(X, Y), (nframes, g.nx, g.ny)).copy()
    return VelocitySeries(g, times, u, v)


def band_limited_noise(g, kmax=8, seed=0, rms=1.0):
    """Smooth random periodic scalar with modes only below kmax, zero mean."""
    rng = np.random.default_rng(seed)
    kx = np.fft.fftfreq(g.nx) * g.nx
    ky = np.fft.fftfreq(g.ny) * g.ny
    kk = np.hypot(kx[:, None], ky[None, :])
    fh = (rng.standard_normal((g.nx, g.ny)) + 1j * rng.standard_normal((g.nx, g.ny)))
    fh *= (kk > 0) & (kk <= kmax)
    f = np.fft.ifft2(fh).real
    f *= rms / np.sqrt(np.mean(f**2))
    return ScalarField2D(g, f)
