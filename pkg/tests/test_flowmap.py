import numpy as np
import pytest

from lcs2d.errors import OutOfRangeError
from lcs2d.flowmap import (
    advect_particle,
    advect_points,
    cauchy_green,
    cauchy_green_field,
    compute_flow_map,
    ftle,
    jacobian_aux_grid,
    mesoclassify,
)

from helpers import grid, steady_series


@pytest.fixture(scope="module")
def rotation_series():
    # rigid rotation about the domain center, angular velocity 1
    g = grid(96)
    return steady_series(
        g, lambda X, Y: -(Y - np.pi), lambda X, Y: X - np.pi, t0=0.0, t1=2.0, nframes=11
    )


@pytest.fixture(scope="module")
def saddle_series():
    g = grid(96)
    return steady_series(
        g, lambda X, Y: X - np.pi, lambda X, Y: -(Y - np.pi), t0=0.0, t1=1.0, nframes=6
    )


@pytest.fixture(scope="module")
def cellular_series():
    g = grid(96)
    return steady_series(
        g,
        lambda X, Y: -0.3 * np.cos(X) * np.sin(Y),
        lambda X, Y: 0.3 * np.sin(X) * np.cos(Y),
        t0=0.0,
        t1=1.0,
        nframes=6,
    )


class TestAdvectParticle:
    def test_uniform_flow(self):
        g = grid(16)
        series = steady_series(g, lambda X, Y: np.ones_like(X), lambda X, Y: 0 * X)
        out = advect_particle(series, (0.0, 0.0), 0.0, 1.0)
        assert out == pytest.approx([1.0, 0.0], abs=1e-12)

    def test_rigid_rotation_quarter_turn(self, rotation_series):
        r = 0.8
        out = advect_particle(rotation_series, (np.pi + r, np.pi), 0.0, np.pi / 2.0)
        assert out == pytest.approx([np.pi, np.pi + r], abs=1e-7)

    def test_forward_backward_roundtrip(self, cellular_series):
        x0 = np.array([2.0, 3.1])
        fwd = advect_points(cellular_series, x0[None, :], 0.0, 1.0)
        back = advect_points(cellular_series, fwd, 1.0, 0.0)
        assert np.max(np.abs(back[0] - x0)) < 1e-6

    def test_window_outside_span(self, cellular_series):
        with pytest.raises(OutOfRangeError):
            advect_particle(cellular_series, (1.0, 1.0), 0.0, 2.0)


class TestComputeFlowMap:
    def test_identity_window(self, cellular_series):
        g = grid(16)
        fm = compute_flow_map(cellular_series, g, 0.5, 0.5)
        X, Y = g.mesh()
        assert np.max(np.abs(fm.fx - X)) < 1e-13
        assert np.max(np.abs(fm.fy - Y)) < 1e-13
        assert np.max(np.abs(fm.df - np.eye(2))) < 1e-10

    def test_uniform_translation(self):
        g = grid(16)
        series = steady_series(
            g, lambda X, Y: 0.3 * np.ones_like(X), lambda X, Y: -0.1 * np.ones_like(X)
        )
        fm = compute_flow_map(series, g, 0.0, 1.0)
        X, Y = g.mesh()
        assert np.max(np.abs(fm.fx - g.wrap(np.stack([X + 0.3, Y], -1))[..., 0])) < 1e-10
        assert np.max(np.abs(fm.fy - g.wrap(np.stack([X, Y - 0.1], -1))[..., 1])) < 1e-10
        assert np.max(np.abs(fm.df - np.eye(2))) < 1e-8

    def test_composition(self, cellular_series):
        rng = np.random.default_rng(5)
        pts = rng.uniform(1.0, 5.0, size=(24, 2))
        ab = advect_points(cellular_series, pts, 0.0, 0.5)
        bc = advect_points(cellular_series, ab, 0.5, 1.0)
        ac = advect_points(cellular_series, pts, 0.0, 1.0)
        assert np.max(np.abs(bc - ac)) < 1e-5


class TestJacobian:
    def test_identity_window(self, cellular_series):
        df = jacobian_aux_grid(cellular_series, (2.0, 2.0), 0.3, 0.3)
        assert np.max(np.abs(df - np.eye(2))) < 1e-12

    def test_linear_saddle(self, saddle_series):
        # exact linearization: DF = diag(e^T, e^-T)
        T = 1.0
        df = jacobian_aux_grid(saddle_series, (np.pi + 0.2, np.pi - 0.3), 0.0, T)
        expected = np.diag([np.e, 1.0 / np.e])
        assert np.max(np.abs(df - expected)) < 1e-5

    def test_rotation_gives_orthogonal_df(self, rotation_series):
        T = 1.2
        df = jacobian_aux_grid(rotation_series, (np.pi + 0.5, np.pi + 0.1), 0.0, T)
        expected = np.array([[np.cos(T), -np.sin(T)], [np.sin(T), np.cos(T)]])
        assert np.max(np.abs(df - expected)) < 1e-6
        assert np.max(np.abs(df.T @ df - np.eye(2))) < 1e-6

    def test_refinement_second_order(self, cellular_series):
        # halving the satellite offset shrinks the stencil error ~4x
        x0 = (2.6, 3.4)
        d_big = jacobian_aux_grid(cellular_series, x0, 0.0, 1.0, delta=4e-2, tol=1e-11)
        d_mid = jacobian_aux_grid(cellular_series, x0, 0.0, 1.0, delta=2e-2, tol=1e-11)
        d_ref = jacobian_aux_grid(cellular_series, x0, 0.0, 1.0, delta=2.5e-3, tol=1e-11)
        e_big = np.max(np.abs(d_big - d_ref))
        e_mid = np.max(np.abs(d_mid - d_ref))
        assert e_mid > 0
        assert 3.0 < e_big / e_mid < 5.5  # second-order stencil: ratio ~ 4


class TestCauchyGreen:
    def test_identity_degenerate(self):
        l1, l2, xi1, xi2, degenerate = cauchy_green(np.eye(2))
        assert degenerate
        assert l1 == pytest.approx(1.0) and l2 == pytest.approx(1.0)
        assert np.allclose(xi1, [1, 0]) or np.allclose(xi1, [0, 1])

    def test_diagonal(self):
        l1, l2, xi1, xi2, degenerate = cauchy_green(np.diag([2.0, 0.5]))
        assert not degenerate
        assert l1 == pytest.approx(0.25, abs=1e-14)
        assert l2 == pytest.approx(4.0, abs=1e-14)
        assert np.allclose(np.abs(xi1), [0, 1], atol=1e-14)
        assert np.allclose(np.abs(xi2), [1, 0], atol=1e-14)

    def test_left_rotation_invariance(self):
        base = np.diag([3.0, 1.0 / 3.0])
        for theta in (0.3, 1.1, 2.9):
            rot = np.array(
                [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
            )
            l1, l2, xi1, xi2, _ = cauchy_green(rot @ base)
            assert l2 == pytest.approx(9.0, abs=1e-12)
            assert l1 == pytest.approx(1.0 / 9.0, abs=1e-12)
            assert np.allclose(np.abs(xi2), [1, 0], atol=1e-12)

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            cauchy_green(np.array([[1.0, 2.0], [0.5, 1.0]]))

    def test_field_orthonormal_eigenvectors(self, cellular_series):
        g = grid(24)
        fm = compute_flow_map(cellular_series, g, 0.0, 1.0)
        cg = cauchy_green_field(fm)
        dots = np.sum(cg.xi1 * cg.xi2, axis=-1)
        assert np.max(np.abs(dots)) < 1e-12
        assert np.max(np.abs(np.linalg.norm(cg.xi1, axis=-1) - 1.0)) < 1e-12
        assert np.max(np.abs(np.linalg.norm(cg.xi2, axis=-1) - 1.0)) < 1e-12
        assert np.all(cg.l1 <= cg.l2 + 1e-15)


class TestFtle:
    def test_zero_for_unit_stretching(self, rotation_series):
        g = grid(24)
        fm = compute_flow_map(rotation_series, g, 0.0, 1.0)
        cg = cauchy_green_field(fm)
        lam = ftle(cg)
        # the linear field only represents a rotation where the full circular
        # orbit avoids the periodic seam; check those nodes
        X, Y = g.mesh()
        inside = np.hypot(X - np.pi, Y - np.pi) < 2.5
        assert np.max(np.abs(lam.values[inside])) < 1e-4

    def test_linear_saddle_rate_one(self, saddle_series):
        for T in (0.5, 1.0):
            df = jacobian_aux_grid(
                saddle_series, (np.pi + 0.2, np.pi + 0.2), 0.0, T, tol=1e-11
            )
            _, l2, _, _, _ = cauchy_green(df)
            rate = np.log(l2) / (2.0 * T)
            assert abs(rate - 1.0) < 1e-6

    def test_forward_backward_symmetry_saddle(self, saddle_series):
        x0 = (np.pi + 0.15, np.pi - 0.2)
        T = 0.8
        df_f = jacobian_aux_grid(saddle_series, x0, 0.0, T, tol=1e-11)
        df_b = jacobian_aux_grid(saddle_series, x0, T, 0.0, tol=1e-11)
        _, l2f, _, _, _ = cauchy_green(df_f)
        _, l2b, _, _, _ = cauchy_green(df_b)
        assert abs(np.log(l2f) - np.log(l2b)) / (2 * T) < 1e-6

    def test_window_validation(self, cellular_series):
        g = grid(16)
        cg = cauchy_green_field(compute_flow_map(cellular_series, g, 0.0, 1.0))
        with pytest.raises(ValueError):
            ftle(cg, 1.0, 0.0)


def _rotation_df(theta):
    return np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])


class TestMesoclassify:
    def _field_from_mats(self, mats):
        from lcs2d.flowmap import FlowMapGrid

        n = 8
        g = grid(n)
        df = np.tile(np.eye(2), (n, n, 1, 1))
        flat = df.reshape(-1, 2, 2)
        for i, m in enumerate(mats):
            flat[i] = m
        X, Y = g.mesh()
        return FlowMapGrid(g, 0.0, 1.0, X, Y, flat.reshape(n, n, 2, 2), 1e-3)

    def test_rotations_elliptic(self):
        mats = [_rotation_df(t) for t in (0.2, 0.9, 1.7, 2.8)]
        mc = mesoclassify(self._field_from_mats(mats))
        flat = mc.elliptic.ravel()
        assert np.all(flat[: len(mats)])
        # oracle: characteristic polynomial roots sit on the unit circle
        for m in mats:
            mu = np.linalg.eigvals(m)
            assert np.max(np.abs(np.abs(mu) - 1.0)) < 1e-12
            assert np.all(np.abs(mu.imag) > 0)

    def test_stretch_hyperbolic(self):
        mc = mesoclassify(self._field_from_mats([np.diag([2.0, 0.5])]))
        assert not mc.elliptic.ravel()[0]
        mu = np.linalg.eigvals(np.diag([2.0, 0.5]))
        assert np.all(np.abs(mu.imag) == 0)

    def test_identity_boundary_flag(self):
        mc = mesoclassify(self._field_from_mats([]))
        assert np.all(mc.elliptic)
        assert np.all(mc.boundary)

    def test_agreement_with_root_location(self):
        # random det-normalized gradients; rule must match root reality
        rng = np.random.default_rng(8)
        mats = []
        while len(mats) < 50:
            m = rng.standard_normal((2, 2))
            d = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if d < 1e-3:  # orientation-preserving gradients only
                continue
            mats.append(m / np.sqrt(d))
        mc = mesoclassify(self._field_from_mats(mats))
        flat = mc.elliptic.ravel()
        bound = mc.boundary.ravel()
        for i, m in enumerate(mats):
            if bound[i]:
                continue
            mu = np.linalg.eigvals(m)
            assert flat[i] == bool(np.any(np.abs(mu.imag) > 0))
