"""Closed uniform-stretch material lines as limit cycles of tensor-derived
direction fields.

For a Cauchy-Green field with eigenvalues l1 <= l2 and eigenvectors xi1, xi2,
the two direction fields for a stretch parameter lam are

    eta = sqrt((l2 - lam^2)/(l2 - l1)) xi1 +- sqrt((lam^2 - l1)/(l2 - l1)) xi2,

defined on the admissible set l1 <= lam^2 <= l2. Closed orbits are located by
Poincare sections: a radial segment anchored at a candidate vortex center is
sampled, the first-return coordinate is computed along integrated lines, and
fixed points of the return map are refined by bisection before the closed
curve is extracted and validated (simplicity, closure, and encirclement of at
least two tensor singularities counted with their winding index).

Tensor interpolation follows the components: C entries are interpolated
bilinearly and re-decomposed at the query point, which avoids averaging
eigenvectors across sign flips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, Point, Polygon

from .errors import AdmissibilityError, DegenerateFieldError, SingularityError
from .flowmap import DEGENERACY_REL, CauchyGreenField, _symmetric_eig

__all__ = [
    "EtaField",
    "eta_at",
    "tangential_stretch",
    "CGSingularity",
    "SingularityScan",
    "find_singularities",
    "integrate_lambda_line",
    "Section",
    "poincare_closed_orbits",
    "average_tangential_strain",
    "ClosedMaterialCurve",
    "VortexNest",
    "VortexBoundarySet",
    "detect_vortices",
    "auto_seeds",
]

# trajectory status codes used by the batch integrator
ACTIVE, RETURNED, LEFT_ADMISSIBLE, HIT_SINGULARITY, MAX_LENGTH, CLOSED = range(6)


class _CGInterp:
    """Bilinear interpolation of tensor components with periodic wrap."""

    def __init__(self, cg: CauchyGreenField):
        self.grid = cg.grid
        self.comp = np.ascontiguousarray(np.stack([cg.c11, cg.c12, cg.c22], axis=-1))

    def components(self, pts):
        g = self.grid
        ix, iy = g.index_coords(pts)
        i0 = np.floor(ix).astype(np.int64)
        j0 = np.floor(iy).astype(np.int64)
        fx = ix - i0
        fy = iy - j0
        i0 %= g.nx
        j0 %= g.ny
        i1 = (i0 + 1) % g.nx
        j1 = (j0 + 1) % g.ny
        c00 = self.comp[i0, j0]
        c10 = self.comp[i1, j0]
        c01 = self.comp[i0, j1]
        c11 = self.comp[i1, j1]
        wx = fx[..., None]
        wy = fy[..., None]
        c = (
            c00 * (1 - wx) * (1 - wy)
            + c10 * wx * (1 - wy)
            + c01 * (1 - wx) * wy
            + c11 * wx * wy
        )
        return c[..., 0], c[..., 1], c[..., 2]

    def eigen(self, pts):
        c11, c12, c22 = self.components(pts)
        det_c = c11 * c22 - c12**2
        return _symmetric_eig(c11, c12, c22, det_c)


@dataclass(frozen=True)
class EtaField:
    """One branch of the stretch direction field at a fixed parameter."""

    cg: CauchyGreenField
    lam: float
    branch: int  # +1 or -1

    def __post_init__(self):
        if self.branch not in (1, -1):
            raise ValueError("branch must be +1 or -1")
        if self.lam <= 0:
            raise ValueError("stretch parameter must be positive")

    def admissible_nodes(self):
        lam2 = self.lam**2
        cg = self.cg
        return (cg.l1 <= lam2) & (lam2 <= cg.l2) & ~cg.degenerate


def _eta_pair(interp, pts, lam2):
    """Both null-direction families at each point.

    Returns (eta_plus, eta_minus, admissible, degenerate). The +- labels
    follow the local eigenvector sign convention and are not globally
    consistent; integrators must continue a family by angular closeness, not
    by label.
    """
    l1, l2, xi1, xi2, _ = interp.eigen(pts)
    spread = l2 - l1
    degenerate = spread <= DEGENERACY_REL * np.abs(l2)
    admissible = (l1 <= lam2) & (lam2 <= l2) & ~degenerate
    safe = np.where(degenerate, 1.0, spread)
    cf1 = (np.sqrt(np.clip((l2 - lam2) / safe, 0.0, None)))[..., None] * xi1
    cf2 = (np.sqrt(np.clip((lam2 - l1) / safe, 0.0, None)))[..., None] * xi2
    ep = cf1 + cf2
    em = cf1 - cf2
    for e in (ep, em):
        norm = np.linalg.norm(e, axis=-1)
        good = norm > 0
        e /= np.where(good, norm, 1.0)[..., None]
    return ep, em, admissible, degenerate


def _eta_eval(interp, pts, lam2, branch):
    """Formula-labeled branch samples; returns (eta, admissible, degenerate)."""
    ep, em, admissible, degenerate = _eta_pair(interp, pts, lam2)
    branch = np.asarray(branch)
    eta = np.where((branch >= 0)[..., None], ep, em)
    return eta, admissible, degenerate


def eta_at(cg: CauchyGreenField, lam: float, branch: int, x):
    """Unit line element of the stretch direction field at one point.

    The sign is arbitrary (line field); callers integrating trajectories must
    orient against their previous tangent.
    """
    f = EtaField(cg, lam, branch)
    interp = _CGInterp(cg)
    pts = np.asarray(x, dtype=np.float64)[None, :]
    eta, adm, degen = _eta_eval(interp, pts, lam**2, branch)
    if degen[0]:
        raise SingularityError(f"tensor degenerate at {tuple(np.round(pts[0], 4))}")
    if not adm[0]:
        raise AdmissibilityError(
            f"lam={f.lam} not admissible at {tuple(np.round(pts[0], 4))}"
        )
    return eta[0]


def tangential_stretch(cg: CauchyGreenField, x, direction):
    """Pointwise stretch factor sqrt(<d, C d> / <d, d>) of a line element."""
    interp = _CGInterp(cg)
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    d = np.asarray(direction, dtype=np.float64)
    if single:
        d = d[None, :]
    c11, c12, c22 = interp.components(pts)
    num = c11 * d[..., 0] ** 2 + 2.0 * c12 * d[..., 0] * d[..., 1] + c22 * d[..., 1] ** 2
    den = d[..., 0] ** 2 + d[..., 1] ** 2
    out = np.sqrt(num / den)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Tensor singularities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CGSingularity:
    position: np.ndarray
    quality: float  # eigenvalue gap at the refined position
    index: int  # winding of (c11 - c22, c12) around the point

    def __iter__(self):
        return iter(self.position)


@dataclass(frozen=True)
class SingularityScan:
    singularities: list
    degenerate_field: bool = False

    def positions(self):
        if not self.singularities:
            return np.zeros((0, 2))
        return np.array([s.position for s in self.singularities])

    def __len__(self):
        return len(self.singularities)

    def __iter__(self):
        return iter(self.singularities)


def _winding_index(interp, center, radius, n=72):
    """Winding of the component pair (c11 - c22, c12) around a point."""
    ang = 2.0 * np.pi * np.arange(n) / n
    ring = center[None, :] + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    c11, c12, c22 = interp.components(ring)
    ph = np.unwrap(np.arctan2(c12, 0.5 * (c11 - c22)))
    closing = np.arctan2(c12[0], 0.5 * (c11[0] - c22[0])) - ph[-1]
    closing = (closing + np.pi) % (2.0 * np.pi) - np.pi
    return int(round((ph[-1] - ph[0] + closing) / (2.0 * np.pi)))


def find_singularities(cg: CauchyGreenField) -> SingularityScan:
    """Sub-cell zeros of (c11 - c22, c12), i.e. points with equal eigenvalues.

    Candidate cells have both components changing sign across their corners
    and are refined by Newton iteration on the bilinear interposants. Nearby
    hits merge; each merged point carries the winding index of the component
    pair, which doubles for a merged (axisymmetric-core) pair of generic
    singularities.
    """
    g = cg.grid
    f = cg.c11 - cg.c22
    h = cg.c12
    spread = cg.l2 - cg.l1
    scale = float(np.max(spread))
    # a field is only hopeless when it is isotropic to machine level everywhere
    if scale <= 1e-12 * float(np.max(np.abs(cg.l2))):
        return SingularityScan([], degenerate_field=True)
    floor = 1e-9 * scale

    def corners(a):
        return a, np.roll(a, -1, 0), np.roll(a, -1, 1), np.roll(np.roll(a, -1, 0), -1, 1)

    f00, f10, f01, f11 = corners(f)
    h00, h10, h01, h11 = corners(h)
    s00, s10, s01, s11 = corners(spread)

    fmin = np.minimum(np.minimum(f00, f10), np.minimum(f01, f11))
    fmax = np.maximum(np.maximum(f00, f10), np.maximum(f01, f11))
    hmin = np.minimum(np.minimum(h00, h10), np.minimum(h01, h11))
    hmax = np.maximum(np.maximum(h00, h10), np.maximum(h01, h11))
    live = np.maximum(np.maximum(s00, s10), np.maximum(s01, s11)) > floor
    cand = (fmin <= 0) & (fmax >= 0) & (hmin <= 0) & (hmax >= 0) & live
    ii, jj = np.nonzero(cand)
    if ii.size == 0:
        return SingularityScan([])

    # Newton on the bilinear pair within each candidate cell
    a0 = f00[ii, jj]
    a1 = f10[ii, jj] - a0
    a2 = f01[ii, jj] - a0
    a3 = f11[ii, jj] - f10[ii, jj] - f01[ii, jj] + a0
    b0 = h00[ii, jj]
    b1 = h10[ii, jj] - b0
    b2 = h01[ii, jj] - b0
    b3 = h11[ii, jj] - h10[ii, jj] - h01[ii, jj] + b0
    s = np.full(ii.shape, 0.5)
    t = np.full(ii.shape, 0.5)
    for _ in range(12):
        fv = a0 + a1 * s + a2 * t + a3 * s * t
        hv = b0 + b1 * s + b2 * t + b3 * s * t
        fs = a1 + a3 * t
        ft = a2 + a3 * s
        hs = b1 + b3 * t
        ht = b2 + b3 * s
        det = fs * ht - ft * hs
        ok = np.abs(det) > 1e-300
        ds = np.where(ok, (fv * ht - ft * hv) / np.where(ok, det, 1.0), 0.0)
        dt = np.where(ok, (fs * hv - fv * hs) / np.where(ok, det, 1.0), 0.0)
        s = np.clip(s - ds, -0.25, 1.25)
        t = np.clip(t - dt, -0.25, 1.25)
    fv = a0 + a1 * s + a2 * t + a3 * s * t
    hv = b0 + b1 * s + b2 * t + b3 * s * t
    res_scale = np.maximum(np.abs(a0) + np.abs(a1) + np.abs(a2) + np.abs(a3), floor)
    converged = (
        (np.hypot(fv, hv) < 1e-6 * np.maximum(res_scale, np.abs(b0) + np.abs(b1) + np.abs(b2) + np.abs(b3)))
        & (s > -0.05)
        & (s < 1.05)
        & (t > -0.05)
        & (t < 1.05)
    )
    xs = g.x0 + (ii + s) * g.dx
    ys = g.y0 + (jj + t) * g.dy
    pts = np.column_stack([xs, ys])[converged]
    if pts.shape[0] == 0:
        return SingularityScan([])

    # merge hits closer than one cell (periodic metric)
    cell = max(g.dx, g.dy)
    merged = []
    used = np.zeros(pts.shape[0], dtype=bool)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    for k in order:
        if used[k]:
            continue
        dxp = np.abs(pts[:, 0] - pts[k, 0])
        dyp = np.abs(pts[:, 1] - pts[k, 1])
        dxp = np.minimum(dxp, g.lx - dxp)
        dyp = np.minimum(dyp, g.ly - dyp)
        close = (np.hypot(dxp, dyp) < 1.2 * cell) & ~used
        used |= close
        members = pts[close]
        ref = pts[k]
        shift = members - ref
        shift[:, 0] -= g.lx * np.round(shift[:, 0] / g.lx)
        shift[:, 1] -= g.ly * np.round(shift[:, 1] / g.ly)
        merged.append(ref + shift.mean(axis=0))

    interp = _CGInterp(cg)
    out = []
    for p in merged:
        c11p, c12p, c22p = interp.components(p[None, :])
        gap = float(np.hypot(0.5 * (c11p[0] - c22p[0]), c12p[0]) * 2.0)
        idx = _winding_index(interp, np.asarray(p), 1.5 * cell)
        if idx == 0:
            # zero winding marks a noise zero or a cancelling merged pair,
            # not a structural degeneracy of the tensor
            continue
        out.append(CGSingularity(np.asarray(p), gap, idx))
    return SingularityScan(out)


# ---------------------------------------------------------------------------
# Batch line-field integration
# ---------------------------------------------------------------------------


@dataclass
class _BatchResult:
    status: np.ndarray
    return_coord: np.ndarray
    cross_point: np.ndarray
    cross_tangent: np.ndarray
    arclength: np.ndarray
    paths: list | None = None


def _integrate_lines(
    interp,
    starts,
    lam2,
    init_dir,
    step,
    max_steps,
    anchors=None,
    sec_dirs=None,
    sec_lens=None,
    x0_ref=None,
    closure_tol=None,
    store_paths=False,
    winding_gate=1.6 * np.pi,
):
    """March many line-field trajectories with shared fixed arclength step.

    Two stopping modes share the machinery: with section data, trajectories
    stop at their first same-sense crossing of the section ray after winding
    most of a loop around the anchor (status RETURNED); with ``x0_ref`` and
    ``closure_tol`` a trajectory stops when it re-enters the closure ball of
    its seed point with aligned tangent (status CLOSED). Leaving the
    admissible set or exceeding the arclength budget also stops a trajectory.
    """
    n = starts.shape[0]
    x = np.array(starts, dtype=np.float64)
    ref = np.array(init_dir, dtype=np.float64)
    init_tan = np.array(init_dir, dtype=np.float64)
    lam2 = np.broadcast_to(np.asarray(lam2, dtype=np.float64), (n,)).copy()
    status = np.full(n, ACTIVE, dtype=np.int8)
    arclen = np.zeros(n)
    ret = np.full(n, np.nan)
    cross_pt = np.full((n, 2), np.nan)
    cross_tan = np.full((n, 2), np.nan)
    winding = np.zeros(n)
    have_section = anchors is not None
    paths = [[starts[i].copy()] for i in range(n)] if store_paths else None

    idx = np.arange(n)  # live trajectory ids, compacted as they finish
    steps_done = 0

    def stage(pts, rd, l2l):
        # continue the geometric family: best of {+-eta_plus, +-eta_minus}
        ep, em, adm, dg = _eta_pair(interp, pts, l2l)
        dp = np.sum(ep * rd, axis=-1)
        dm = np.sum(em * rd, axis=-1)
        use_m = np.abs(dm) > np.abs(dp)
        e = np.where(use_m[:, None], em, ep)
        d = np.where(use_m, dm, dp)
        e = e * np.where(d >= 0, 1.0, -1.0)[:, None]
        return e, adm, dg

    while idx.size and steps_done < max_steps:
        xl = x[idx]
        rl = ref[idx]
        l2l = lam2[idx]
        e1, ok1, dg1 = stage(xl, rl, l2l)
        e2, ok2, dg2 = stage(xl + (0.5 * step) * e1, e1, l2l)
        e3, ok3, dg3 = stage(xl + (0.5 * step) * e2, e2, l2l)
        e4, ok4, dg4 = stage(xl + step * e3, e3, l2l)
        ok = ok1 & ok2 & ok3 & ok4
        degen = dg1 | dg2 | dg3 | dg4
        disp = (step / 6.0) * (e1 + 2.0 * e2 + 2.0 * e3 + e4)
        xn = xl + disp

        stopped_now = ~ok
        status[idx[stopped_now & degen]] = HIT_SINGULARITY
        status[idx[stopped_now & ~degen]] = LEFT_ADMISSIBLE

        adv = ok
        ids = idx[adv]
        xa_old = xl[adv]
        xa_new = xn[adv]
        ta_old = e1[adv]
        ta_new = e4[adv]  # stage-aligned already; sign follows travel direction

        if have_section and ids.size:
            A = anchors[ids]
            D = sec_dirs[ids]
            p_old = D[:, 0] * (xa_old[:, 1] - A[:, 1]) - D[:, 1] * (xa_old[:, 0] - A[:, 0])
            p_new = D[:, 0] * (xa_new[:, 1] - A[:, 1]) - D[:, 1] * (xa_new[:, 0] - A[:, 0])
            ang_old = np.arctan2(xa_old[:, 1] - A[:, 1], xa_old[:, 0] - A[:, 0])
            ang_new = np.arctan2(xa_new[:, 1] - A[:, 1], xa_new[:, 0] - A[:, 0])
            dang = (ang_new - ang_old + np.pi) % (2.0 * np.pi) - np.pi
            winding[ids] += dang
            gate = np.abs(winding[ids]) >= winding_gate
            crossed = (p_old < 0) & (p_new >= 0) & gate & (arclen[ids] > 3 * step)
            if np.any(crossed):
                cids = ids[crossed]
                xo = xa_old[crossed]
                xnw = xa_new[crossed]
                to = ta_old[crossed] * step
                tn = ta_new[crossed] * step
                po = p_old[crossed]
                pn = p_new[crossed]
                # cubic Hermite root of the signed offset along the step
                dpo = sec_dirs[cids][:, 0] * to[:, 1] - sec_dirs[cids][:, 1] * to[:, 0]
                dpn = sec_dirs[cids][:, 0] * tn[:, 1] - sec_dirs[cids][:, 1] * tn[:, 0]
                sig = np.where(np.abs(pn - po) > 0, pn - po, 1.0)
                tau = np.clip(po / np.where(sig != 0, sig, 1.0) * -1.0, 0.0, 1.0)
                for _ in range(4):
                    h00 = 2 * tau**3 - 3 * tau**2 + 1
                    h10 = tau**3 - 2 * tau**2 + tau
                    h01 = -2 * tau**3 + 3 * tau**2
                    h11 = tau**3 - tau**2
                    pv = h00 * po + h10 * dpo + h01 * pn + h11 * dpn
                    dv = (
                        (6 * tau**2 - 6 * tau) * po
                        + (3 * tau**2 - 4 * tau + 1) * dpo
                        + (-6 * tau**2 + 6 * tau) * pn
                        + (3 * tau**2 - 2 * tau) * dpn
                    )
                    good = np.abs(dv) > 1e-300
                    tau = np.clip(tau - np.where(good, pv / np.where(good, dv, 1.0), 0.0), 0.0, 1.0)
                h00 = 2 * tau**3 - 3 * tau**2 + 1
                h10 = tau**3 - 2 * tau**2 + tau
                h01 = -2 * tau**3 + 3 * tau**2
                h11 = tau**3 - tau**2
                cp = (
                    h00[:, None] * xo
                    + h10[:, None] * to
                    + h01[:, None] * xnw
                    + h11[:, None] * tn
                )
                q = np.sum((cp - anchors[cids]) * sec_dirs[cids], axis=1)
                in_seg = (q >= 0) & (q <= sec_lens[cids] + step)
                hit = cids[in_seg]
                status[hit] = RETURNED
                ret[hit] = q[in_seg]
                cross_pt[hit] = cp[in_seg]
                tan_c = (1 - tau[in_seg])[:, None] * to[in_seg] + tau[in_seg][:, None] * tn[in_seg]
                nrm = np.linalg.norm(tan_c, axis=1, keepdims=True)
                cross_tan[hit] = tan_c / np.where(nrm > 0, nrm, 1.0)

        if closure_tol is not None and ids.size:
            d0 = np.linalg.norm(xa_new - x0_ref[ids], axis=1)
            far_enough = arclen[ids] > 4.0 * closure_tol + 3.0 * step
            align = np.sum(ta_new * init_tan[ids], axis=1) >= np.cos(np.deg2rad(10.0))
            closed = (d0 <= closure_tol) & far_enough & align
            cc = ids[closed]
            status[cc] = CLOSED
            cross_pt[cc] = xa_new[closed]
            cross_tan[cc] = ta_new[closed]

        # write advanced state back
        x[ids] = xa_new
        ref[ids] = np.where(
            (np.linalg.norm(disp[adv], axis=1) > 0)[:, None],
            disp[adv] / np.maximum(np.linalg.norm(disp[adv], axis=1), 1e-300)[:, None],
            ta_old,
        )
        arclen[ids] += step
        if store_paths:
            for local, i in enumerate(ids):
                paths[i].append(xa_new[local].copy())

        idx = idx[status[idx] == ACTIVE]
        steps_done += 1

    status[status == ACTIVE] = MAX_LENGTH
    return _BatchResult(status, ret, cross_pt, cross_tan, arclen, paths)


# ---------------------------------------------------------------------------
# Single-trajectory integration
# ---------------------------------------------------------------------------


def integrate_lambda_line(
    cg: CauchyGreenField,
    lam: float,
    branch: int,
    x0,
    max_arclength: float,
    step: float | None = None,
    closure_tol: float | None = None,
):
    """One trajectory of the stretch direction field, as a polyline.

    Fixed-step RK4 in arclength with local tangent re-orientation. Returns
    (vertices, status) where status is one of CLOSED, LEFT_ADMISSIBLE,
    HIT_SINGULARITY, or MAX_LENGTH. Starting outside the admissible set
    raises; starting on a degenerate point raises SingularityError.
    """
    g = cg.grid
    step = step or 0.25 * min(g.dx, g.dy)
    closure_tol = closure_tol if closure_tol is not None else max(1e-3, 0.5 * min(g.dx, g.dy))
    x0 = np.asarray(x0, dtype=np.float64)
    d0 = eta_at(cg, lam, branch, x0)  # validates admissibility at the seed
    interp = _CGInterp(cg)
    res = _integrate_lines(
        interp,
        x0[None, :],
        lam**2,
        d0[None, :],
        step,
        max_steps=int(math.ceil(max_arclength / step)),
        x0_ref=x0[None, :],
        closure_tol=closure_tol,
        store_paths=True,
    )
    verts = np.array(res.paths[0])
    status = int(res.status[0])
    if status == CLOSED:
        verts = np.vstack([verts, verts[:1]])
    return verts, status


# ---------------------------------------------------------------------------
# Closed-orbit detection on a Poincare section
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Section:
    """Radial segment from an anchor point; return coordinates live on it."""

    anchor: tuple
    direction: tuple = (1.0, 0.0)
    length: float = 1.0
    samples: int = 200

    def unit(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("section direction must be nonzero")
        return d / n


@dataclass(frozen=True)
class ClosedMaterialCurve:
    """Closed polyline with its stretch parameter and provenance."""

    vertices: np.ndarray  # (n, 2), first == last, positive signed area
    lam: float
    branch: int
    a: float
    b: float
    enclosed_singularities: np.ndarray  # (k, 2)
    singularity_index_sum: int
    provenance: dict = field(default_factory=dict)

    @property
    def window(self):
        return (self.a, self.b)

    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)))

    def area(self) -> float:
        x = self.vertices[:, 0]
        y = self.vertices[:, 1]
        return float(0.5 * np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))

    def centroid(self):
        return self.vertices[:-1].mean(axis=0)

    def diameter(self) -> float:
        v = self.vertices[:-1]
        lo = v.min(axis=0)
        hi = v.max(axis=0)
        return float(np.max(hi - lo))

    def is_primary(self) -> bool:
        return abs(self.lam - 1.0) < 1e-12


def _signed_area(verts):
    x = verts[:, 0]
    y = verts[:, 1]
    return 0.5 * np.sum(x[:-1] * y[1:] - x[1:] * y[:-1])


def _nearest_image(points, ref, grid):
    """Shift points by lattice vectors so they land nearest to ref."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64)).copy()
    pts[:, 0] -= grid.lx * np.round((pts[:, 0] - ref[0]) / grid.lx)
    pts[:, 1] -= grid.ly * np.round((pts[:, 1] - ref[1]) / grid.ly)
    return pts


def _enclosed_singularities(verts, scan: SingularityScan, grid):
    if len(scan) == 0:
        return np.zeros((0, 2)), 0
    poly = Polygon(verts[:-1])
    if not poly.is_valid:
        poly = poly.buffer(0)
    centroid = verts[:-1].mean(axis=0)
    pts = _nearest_image(scan.positions(), centroid, grid)
    inside = [poly.contains(Point(p)) for p in pts]
    chosen = [(p, s.index) for p, s, keep in zip(pts, scan, inside) if keep]
    if not chosen:
        return np.zeros((0, 2)), 0
    return np.array([c[0] for c in chosen]), int(sum(abs(c[1]) for c in chosen))


def _is_simple(verts):
    return LineString(verts).is_simple


def _extract_orbit(
    interp, cg, lam, branch, anchor, direction, length, s_star, step, max_steps, closure_tol
):
    start = anchor + s_star * direction
    eta, adm, degen = _eta_eval(interp, start[None, :], lam**2, branch)
    if not adm[0]:
        return None
    d0 = eta[0]
    if direction[0] * d0[1] - direction[1] * d0[0] < 0:
        d0 = -d0
    res = _integrate_lines(
        interp,
        start[None, :],
        lam**2,
        d0[None, :],
        step,
        max_steps,
        anchors=anchor[None, :],
        sec_dirs=direction[None, :],
        sec_lens=np.array([length]),
        store_paths=True,
    )
    if res.status[0] != RETURNED:
        return None
    if abs(res.return_coord[0] - s_star) > closure_tol:
        return None
    if np.dot(res.cross_tangent[0], d0) < np.cos(np.deg2rad(10.0)):
        return None
    verts = np.array(res.paths[0])
    verts[-1] = res.cross_point[0]
    verts = np.vstack([verts, verts[:1]])
    if _signed_area(verts) < 0:
        verts = verts[::-1].copy()
    if not _is_simple(verts):
        return None
    return verts


def _launch_dirs(interp, starts, lam2, branch, direction):
    eta, adm, _ = _eta_eval(interp, starts, lam2, branch)
    sign = np.where(direction[0] * eta[:, 1] - direction[1] * eta[:, 0] >= 0, 1.0, -1.0)
    return eta * sign[:, None], adm


class _OrbitFinder:
    """Batched return-map evaluation and fixed-point refinement on one section.

    All trajectories of a (lambda, branch) sweep integrate in a single batch,
    and all bisection brackets advance together one round at a time, so the
    per-step python overhead is shared across every live trajectory.
    """

    def __init__(self, cg, singularities, step=None, max_arclength=None, fixed_point_tol=None):
        g = cg.grid
        self.cg = cg
        self.interp = _CGInterp(cg)
        self.singularities = singularities
        self.step = step or 0.25 * min(g.dx, g.dy)
        self.max_arclength = max_arclength
        self.fixed_point_tol = fixed_point_tol or 1e-6 * min(g.lx, g.ly)
        self.closure_tol = max(1e-3, 0.5 * min(g.dx, g.dy))

    def _max_steps(self, length):
        max_len = self.max_arclength or 6.0 * np.pi * length
        return int(math.ceil(max_len / self.step))

    def return_map(self, anchor, direction, length, svals, lam2, branch):
        """P(s) per trajectory; NaN where no same-sense return occurs."""
        starts = anchor[None, :] + svals[:, None] * direction[None, :]
        dirs, adm = _launch_dirs(self.interp, starts, lam2, branch, direction)
        out = np.full(svals.shape[0], np.nan)
        live = np.nonzero(adm)[0]
        if live.size == 0:
            return out
        res = _integrate_lines(
            self.interp,
            starts[live],
            lam2[live],
            dirs[live],
            self.step,
            self._max_steps(length),
            anchors=np.broadcast_to(anchor, (live.size, 2)).copy(),
            sec_dirs=np.broadcast_to(direction, (live.size, 2)).copy(),
            sec_lens=np.full(live.size, length),
        )
        hit = res.status == RETURNED
        out[live[hit]] = res.return_coord[hit]
        return out

    def fixed_points(self, anchor, direction, length, combos, samples):
        """Fixed points of the return map for every (lam, branch) combo.

        Returns a list of (lam, branch, s_star). One mega-batch sweep feeds
        the bracketing; bisection advances all brackets in shared rounds.
        """
        svals = np.linspace(0.0, length, samples + 1)[1:]
        n_s = svals.size
        lam2_all = np.repeat([lam * lam for lam, _ in combos], n_s)
        branch_all = np.repeat([b for _, b in combos], n_s)
        s_all = np.tile(svals, len(combos))
        p_all = self.return_map(anchor, direction, length, s_all, lam2_all, branch_all)

        # bracket sign changes of P(s) - s between adjacent returning samples;
        # a combo without any sign change may still carry a neutral family of
        # orbits (return map shifted off zero only by interpolation drift), so
        # samples already inside the closure tolerance become direct candidates
        direct = []
        lo, hi, glo, which = [], [], [], []
        for ci in range(len(combos)):
            p = p_all[ci * n_s : (ci + 1) * n_s]
            gdiff = p - svals
            ok = np.isfinite(p)
            found_bracket = False
            for a_i in range(n_s - 1):
                b_i = a_i + 1
                if not (ok[a_i] and ok[b_i]):
                    continue
                if gdiff[a_i] * gdiff[b_i] < 0 or gdiff[a_i] == 0.0:
                    lo.append(svals[a_i])
                    hi.append(svals[b_i])
                    glo.append(gdiff[a_i])
                    which.append(ci)
                    found_bracket = True
            if not found_bracket:
                near = np.nonzero(ok & (np.abs(gdiff) <= 0.5 * self.closure_tol))[0]
                if near.size:
                    stride = max(1, near.size // 30)
                    take = list(near[::stride])
                    if near[-1] not in take:  # keep the outermost candidate
                        take.append(near[-1])
                    lam_c, branch_c = combos[ci]
                    direct.extend((lam_c, branch_c, float(svals[k])) for k in take)
        if not lo:
            return direct
        lo = np.array(lo)
        hi = np.array(hi)
        glo = np.array(glo)
        which = np.array(which)
        lam2_b = np.array([combos[c][0] ** 2 for c in which])
        branch_b = np.array([combos[c][1] for c in which], dtype=float)

        alive = np.ones(lo.shape[0], dtype=bool)
        for _ in range(64):
            wide = alive & (hi - lo > self.fixed_point_tol)
            if not np.any(wide):
                break
            mid = 0.5 * (lo + hi)
            idx = np.nonzero(wide)[0]
            gm = (
                self.return_map(
                    anchor, direction, length, mid[idx], lam2_b[idx], branch_b[idx]
                )
                - mid[idx]
            )
            dead = ~np.isfinite(gm)
            alive[idx[dead]] = False
            good = idx[~dead]
            gmg = gm[~dead]
            take_hi = glo[good] * gmg <= 0
            hi[good[take_hi]] = mid[good[take_hi]]
            lo[good[~take_hi]] = mid[good[~take_hi]]
            glo[good[~take_hi]] = gmg[~take_hi]

        out = list(direct)
        for k in np.nonzero(alive)[0]:
            lam, branch = combos[which[k]]
            out.append((lam, branch, 0.5 * (lo[k] + hi[k])))
        return out

    def extract(self, anchor, direction, length, lam, branch, s_star, min_index_sum):
        verts = _extract_orbit(
            self.interp,
            self.cg,
            lam,
            branch,
            anchor,
            direction,
            length,
            s_star,
            self.step,
            self._max_steps(length),
            self.closure_tol,
        )
        if verts is None:
            return None
        enc, idx_sum = _enclosed_singularities(verts, self.singularities, self.cg.grid)
        if idx_sum < min_index_sum:
            return None
        return ClosedMaterialCurve(
            verts,
            float(lam),
            int(branch),
            self.cg.a,
            self.cg.b,
            enc,
            idx_sum,
            provenance={"section_anchor": tuple(anchor), "s_fixed": float(s_star)},
        )


def _dedupe_fixed_points(points, tol=1e-6):
    """Merge fixed points of one combo closer than tol in the section coordinate."""
    by_combo = {}
    for lam, branch, s in points:
        by_combo.setdefault((lam, branch), []).append(s)
    out = []
    for (lam, branch), svals in by_combo.items():
        svals.sort()
        kept = []
        for s in svals:
            if not kept or s - kept[-1] > tol:
                kept.append(s)
        out.extend((lam, branch, s) for s in kept)
    return out


def poincare_closed_orbits(
    cg: CauchyGreenField,
    lam: float,
    branch: int,
    section: Section,
    singularities: SingularityScan | None = None,
    step: float | None = None,
    max_arclength: float | None = None,
    fixed_point_tol: float | None = None,
    min_index_sum: int = 2,
):
    """Closed orbits of one direction field crossing a radial section.

    Launch points sample the section; the first-return coordinate defines the
    return map, whose fixed points (sign changes refined by bisection) are
    expanded into closed curves. Curves must close cleanly, be simple, and
    enclose tensor singularities with total winding index >= min_index_sum.
    Samples without a return are simply excluded from the map.
    """
    if singularities is None:
        singularities = find_singularities(cg)
    if singularities.degenerate_field:
        raise DegenerateFieldError("tensor field degenerate over most of the domain")
    finder = _OrbitFinder(cg, singularities, step, max_arclength, fixed_point_tol)
    anchor = np.asarray(section.anchor, dtype=np.float64)
    direction = section.unit()
    fixed = finder.fixed_points(
        anchor, direction, section.length, [(float(lam), int(branch))], section.samples
    )
    curves = []
    for lam_i, branch_i, s_star in _dedupe_fixed_points(fixed):
        c = finder.extract(
            anchor, direction, section.length, lam_i, branch_i, s_star, min_index_sum
        )
        if c is not None:
            curves.append(c)
    return curves


# ---------------------------------------------------------------------------
# Average tangential strain along a curve
# ---------------------------------------------------------------------------


def average_tangential_strain(curve, cg: CauchyGreenField) -> float:
    """Arclength-weighted mean of the pointwise tangential stretch factor."""
    verts = curve.vertices if isinstance(curve, ClosedMaterialCurve) else np.asarray(curve)
    ring = verts[:-1] if np.allclose(verts[0], verts[-1]) else verts
    nxt = np.roll(ring, -1, axis=0)
    prv = np.roll(ring, 1, axis=0)
    tangents = nxt - prv
    edge = np.linalg.norm(nxt - ring, axis=1)
    weights = 0.5 * (edge + np.roll(edge, 1))
    q = tangential_stretch(cg, ring, tangents)
    total = np.sum(weights)
    if total == 0:
        raise ValueError("degenerate curve")
    return float(np.sum(q * weights) / total)


# ---------------------------------------------------------------------------
# Vortex detection across parameter sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VortexNest:
    """A family of nested closed curves around one vortex."""

    outermost: ClosedMaterialCurve
    members: tuple  # all curves, sorted outermost first
    primary: ClosedMaterialCurve | None  # unit-stretch member, if present


@dataclass(frozen=True)
class VortexBoundarySet:
    nests: tuple

    def boundaries(self):
        return [n.outermost for n in self.nests]

    def __len__(self):
        return len(self.nests)

    def __iter__(self):
        return iter(self.nests)


def auto_seeds(cg: CauchyGreenField, singularities=None, max_seeds=12):
    """Candidate vortex centers: stretch-field lows plus singularity pairs."""
    from scipy import ndimage as ndi

    g = cg.grid
    smooth = ndi.gaussian_filter(np.log(np.maximum(cg.l2, 1e-300)), sigma=2.0, mode="wrap")
    mins = ndi.minimum_filter(smooth, size=9, mode="wrap") == smooth
    cutoff = np.quantile(smooth, 0.35)
    mins &= smooth <= cutoff
    ii, jj = np.nonzero(mins)
    order = np.argsort(smooth[ii, jj])
    pts = [np.array([g.x[i], g.y[j]]) for i, j in zip(ii[order], jj[order])]

    if singularities is None:
        singularities = find_singularities(cg)
    sp = singularities.positions()
    if sp.shape[0] >= 2:
        # midpoints of close singularity pairs are natural centers
        for i in range(sp.shape[0]):
            shifted = _nearest_image(sp, sp[i], g)
            d = np.linalg.norm(shifted - sp[i], axis=1)
            d[i] = np.inf
            j = int(np.argmin(d))
            if d[j] < 8.0 * max(g.dx, g.dy):
                pts.append(0.5 * (sp[i] + shifted[j]))

    # deduplicate, periodic metric
    seeds = []
    min_sep = 10.0 * max(g.dx, g.dy)
    for p in pts:
        p = g.wrap(p[None, :])[0]
        if all(
            np.linalg.norm(_nearest_image(p[None, :], q, g)[0] - q) >= min_sep for q in seeds
        ):
            seeds.append(p)
        if len(seeds) >= max_seeds:
            break
    return seeds


def _curves_equivalent(a, b, grid, tol):
    ca = a.centroid()
    cb = _nearest_image(b.centroid()[None, :], ca, grid)[0]
    if np.linalg.norm(ca - cb) > tol:
        return False
    ar_a, ar_b = abs(a.area()), abs(b.area())
    return abs(ar_a - ar_b) <= 0.02 * max(ar_a, ar_b)


def _contains(a: ClosedMaterialCurve, b: ClosedMaterialCurve, grid):
    pa = Polygon(a.vertices[:-1])
    if not pa.is_valid:
        pa = pa.buffer(0)
    shifted = _nearest_image(b.vertices[:-1], a.centroid(), grid)
    probe = shifted[:: max(1, shifted.shape[0] // 16)]
    return all(pa.contains(Point(p)) for p in probe)


def group_nests(curves, grid):
    """Cluster curves by containment into per-vortex nests."""
    if not curves:
        return VortexBoundarySet(())
    order = np.argsort([-abs(c.area()) for c in curves])
    curves = [curves[i] for i in order]
    near_tol = 2.0 * max(grid.dx, grid.dy)
    assigned = [None] * len(curves)
    roots = []
    for i, c in enumerate(curves):
        for r in roots:
            if _contains(curves[r], c, grid) or _curves_equivalent(curves[r], c, grid, near_tol):
                assigned[i] = r
                break
        else:
            roots.append(i)
            assigned[i] = i
    nests = []
    for r in roots:
        members = [curves[i] for i in range(len(curves)) if assigned[i] == r]
        primary = None
        for m in members:
            if m.is_primary():
                primary = m
                break
        nests.append(VortexNest(members[0], tuple(members), primary))
    nests.sort(key=lambda n: (n.outermost.centroid()[0], n.outermost.centroid()[1]))
    return VortexBoundarySet(tuple(nests))


def detect_vortices(
    cg: CauchyGreenField,
    lambda_values=None,
    seeds=None,
    section_fraction=0.2,
    samples=200,
    step: float | None = None,
    min_index_sum: int = 2,
) -> VortexBoundarySet:
    """Sweep stretch parameters and seeds; return nested vortex boundaries.

    Defaults: lambda sweep 0.90..1.10 in steps of 0.01, both branches, radial
    sections of 20% of the domain width anchored at automatic seeds.
    Output order is deterministic.
    """
    if lambda_values is None:
        lambda_values = np.round(np.arange(0.90, 1.10 + 1e-9, 0.01), 10)
    singular = find_singularities(cg)
    if singular.degenerate_field:
        raise DegenerateFieldError("tensor field degenerate over most of the domain")
    if seeds is None:
        seeds = auto_seeds(cg, singular)
    g = cg.grid
    length = section_fraction * min(g.lx, g.ly)
    combos = [(float(lam), branch) for lam in lambda_values for branch in (1, -1)]
    finder = _OrbitFinder(cg, singular, step)
    direction = np.array([1.0, 0.0])
    all_curves = []
    for seed_idx, seed in enumerate(seeds):
        anchor = np.asarray(seed, dtype=np.float64)
        fixed = finder.fixed_points(anchor, direction, length, combos, samples)
        for lam, branch, s_star in _dedupe_fixed_points(fixed):
            c = finder.extract(anchor, direction, length, lam, branch, s_star, min_index_sum)
            if c is not None:
                c.provenance.update(seed_index=seed_idx)
                all_curves.append(c)

    # drop duplicates: the same geometric orbit reappears across seeds and
    # across formula branch labels (the labels are not globally consistent)
    unique = []
    tol = 2.0 * max(g.dx, g.dy)
    for c in all_curves:
        if not any(
            u.lam == c.lam and _curves_equivalent(u, c, g, tol) for u in unique
        ):
            unique.append(c)
    return group_nests(unique, g)
