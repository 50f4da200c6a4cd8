"""Analytic benchmark flows and tensors with known closed-orbit structure.

Two families:

* ``shear_ring_tensor`` builds a Cauchy-Green field directly from an
  axisymmetric tangential-shear profile. In the polar frame the tensor is
  ``[[1 + g^2, g], [g, 1]]``, so every circle around the center is an exact
  unit-stretch line wherever the shear g(r) is nonzero.

* ``swirl_vortex_series`` samples a steady velocity with a radial component
  that changes sign at ``r_switch`` plus a differential swirl. Material
  circles map to circles, with radius ratio governed by the 1-D radial ODE
  ``dr/dt = radial(r)``, so circles of known radius are closed uniform-stretch
  lines for stretch factors on both sides of 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Grid2D, VelocitySeries
from .flowmap import CauchyGreenField, cauchy_green_from_components

__all__ = ["shear_ring_tensor", "SwirlVortex", "swirl_vortex_series"]


def shear_ring_tensor(
    grid: Grid2D,
    center=(np.pi, np.pi),
    gamma0=2.0,
    r_max=1.0,
    a=0.0,
    b=1.0,
) -> CauchyGreenField:
    """Tensor of a pure tangential shear ring: circles are unit-stretch lines.

    The shear profile gamma(r) = gamma0 * sin^2(pi r / r_max) on r < r_max and
    exactly zero outside, so the tensor is degenerate (isotropic) at the
    center and everywhere beyond r_max.
    """
    X, Y = grid.mesh()
    dx = X - center[0]
    dy = Y - center[1]
    r = np.hypot(dx, dy)
    gamma = np.where(r < r_max, gamma0 * np.sin(np.pi * np.minimum(r, r_max) / r_max) ** 2, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ct = np.where(r > 0, dx / np.where(r > 0, r, 1.0), 1.0)
        st = np.where(r > 0, dy / np.where(r > 0, r, 1.0), 0.0)
    # rotate [[1+g^2, g], [g, 1]] from the polar frame into Cartesian axes
    c_rr = 1.0 + gamma**2
    c_rt = gamma
    c_tt = np.ones_like(gamma)
    c11 = c_rr * ct**2 - 2.0 * c_rt * ct * st + c_tt * st**2
    c12 = (c_rr - c_tt) * ct * st + c_rt * (ct**2 - st**2)
    c22 = c_rr * st**2 + 2.0 * c_rt * ct * st + c_tt * ct**2
    return cauchy_green_from_components(grid, a, b, c11, c12, c22)


@dataclass(frozen=True)
class SwirlVortex:
    """Steady radial + swirl velocity, localized around ``center``.

    radial(r)/r = strength * (1 - (r/r_switch)^2) * exp(-(r/r_decay)^2)
    swirl(r)/r  = spin * exp(-(r/spin_decay)^2)

    The radial component vanishes at r_switch, so that circle is invariant;
    inner circles expand, outer ones contract (for strength > 0). The swirl
    supplies the differential rotation that keeps the circles strictly inside
    the admissible set of the stretch direction fields.
    """

    center: tuple = (np.pi, np.pi)
    strength: float = 0.18
    r_switch: float = 0.55
    r_decay: float = 0.6
    spin: float = 1.2
    spin_decay: float = 0.7

    def radial_over_r(self, r):
        r = np.asarray(r, dtype=np.float64)
        return self.strength * (1.0 - (r / self.r_switch) ** 2) * np.exp(-((r / self.r_decay) ** 2))

    def radial(self, r):
        return np.asarray(r) * self.radial_over_r(r)

    def velocity(self, X, Y):
        dx = X - self.center[0]
        dy = Y - self.center[1]
        r = np.hypot(dx, dy)
        g_r = self.radial_over_r(r)
        h_r = self.spin * np.exp(-((r / self.spin_decay) ** 2))
        return g_r * dx - h_r * dy, g_r * dy + h_r * dx


def swirl_vortex_series(
    grid: Grid2D, vortex: SwirlVortex | None = None, t0=0.0, t1=2.0, dt=0.2
) -> VelocitySeries:
    vortex = vortex or SwirlVortex()
    X, Y = grid.mesh()
    u, v = vortex.velocity(X, Y)
    n = int(round((t1 - t0) / dt)) + 1
    times = t0 + dt * np.arange(n)
    return VelocitySeries(
        grid,
        times,
        np.broadcast_to(u, (n,) + u.shape).copy(),
        np.broadcast_to(v, (n,) + v.shape).copy(),
    )
