import numpy as np
import pytest

from lcs2d.errors import FieldFormatError, OutOfRangeError, SolvabilityError
from lcs2d.fields import (
    Grid2D,
    ScalarField2D,
    VectorField2D,
    VelocitySeries,
    interp_velocity,
    invert_laplacian_neg,
    spectral_curl,
    spectral_divergence,
    spectral_gradient,
)
from lcs2d import fileio

from helpers import band_limited_noise, grid, scalar_from, steady_series, vector_from


class TestGrid:
    def test_spacing_and_nodes(self):
        g = Grid2D(16, 32, 0.0, 2.0 * np.pi, -1.0, 1.0)
        assert g.dx == pytest.approx(2.0 * np.pi / 16)
        assert g.dy == pytest.approx(2.0 / 32)
        assert g.x[0] == 0.0
        assert g.y[0] == -1.0
        # last node is one spacing short of the wrap point
        assert g.x[-1] == pytest.approx(2.0 * np.pi - g.dx)

    def test_validation(self):
        with pytest.raises(ValueError):
            Grid2D(4, 16)
        with pytest.raises(ValueError):
            Grid2D(16, 16, 1.0, 1.0)

    def test_fields_reject_bad_values(self):
        g = grid(16)
        bad = np.zeros((16, 16))
        bad[3, 4] = np.nan
        with pytest.raises(ValueError):
            ScalarField2D(g, bad)
        with pytest.raises(ValueError):
            VectorField2D(g, np.zeros((16, 16)), np.zeros((8, 8)))

    def test_fields_are_immutable(self):
        f = scalar_from(grid(16), lambda X, Y: np.sin(X))
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0


class TestInterpVelocity:
    def test_constant_field_reproduced_exactly(self):
        g = grid(16)
        series = steady_series(g, lambda X, Y: np.ones_like(X), lambda X, Y: np.zeros_like(X))
        for pt, t in [((0.1, 5.3), 0.0), ((2.0, 1.0), 0.77), ((-4.0, 9.0), 1.0)]:
            vel = interp_velocity(series, pt, t)
            assert vel == pytest.approx([1.0, 0.0], abs=1e-13)

    def test_grid_node_at_frame_time_is_bit_exact(self):
        g = grid(16)
        rng = np.random.default_rng(1)
        times = np.array([0.0, 0.5, 1.0])
        u = rng.standard_normal((3, 16, 16))
        v = rng.standard_normal((3, 16, 16))
        series = VelocitySeries(g, times, u, v)
        for k in (0, 1, 2):
            i, j = 5, 11
            vel = interp_velocity(series, (g.x[i], g.y[j]), times[k])
            assert vel[0] == u[k, i, j]
            assert vel[1] == v[k, i, j]

    def test_smooth_field_off_node(self):
        # oracle: closed form sin(pi/3); periodic cubic spline converges at 4th order
        g = grid(64)
        series = steady_series(g, lambda X, Y: np.sin(Y), lambda X, Y: np.zeros_like(X))
        vel = interp_velocity(series, (1.0, np.pi / 3.0), 0.3)
        assert abs(vel[0] - np.sin(np.pi / 3.0)) < 1e-6
        assert abs(vel[1]) < 1e-12

    def test_periodic_wrap(self):
        g = grid(32)
        series = steady_series(
            g, lambda X, Y: np.sin(X) * np.cos(Y), lambda X, Y: np.cos(2 * Y)
        )
        rng = np.random.default_rng(2)
        pts = rng.uniform(0, 2 * np.pi, size=(20, 2))
        lx = np.array([2.0 * np.pi, 0.0])
        for t in (0.0, 0.41):
            a = series.velocity_at(pts, t)
            b = series.velocity_at(pts + lx, t)
            c = series.velocity_at(pts - 3 * lx[::-1], t)  # shift in y
            assert np.max(np.abs(a - b)) < 1e-12
            assert np.max(np.abs(a - c)) < 1e-12

    def test_time_linear_between_frames(self):
        g = grid(16)
        times = np.array([0.0, 1.0])
        u = np.stack([np.zeros((16, 16)), np.ones((16, 16))])
        v = np.zeros((2, 16, 16))
        series = VelocitySeries(g, times, u, v)
        vel = interp_velocity(series, (1.0, 1.0), 0.25)
        assert vel[0] == pytest.approx(0.25, abs=1e-14)

    def test_out_of_span_raises(self):
        g = grid(16)
        series = steady_series(g, lambda X, Y: X * 0, lambda X, Y: X * 0, t0=0.0, t1=1.0)
        with pytest.raises(OutOfRangeError):
            interp_velocity(series, (0.0, 0.0), 1.5)
        with pytest.raises(OutOfRangeError):
            interp_velocity(series, (0.0, 0.0), -0.5)

    def test_series_validation(self):
        g = grid(16)
        z = np.zeros((3, 16, 16))
        with pytest.raises(ValueError):
            VelocitySeries(g, [0.0, 0.1, 0.3], z, z)  # non-uniform spacing
        with pytest.raises(ValueError):
            VelocitySeries(g, [0.0, -0.1, -0.2], z, z)  # decreasing


class TestSpectralOperators:
    def test_gradient_of_constant(self):
        f = scalar_from(grid(32), lambda X, Y: np.full_like(X, 3.7))
        gr = spectral_gradient(f)
        assert np.max(np.abs(gr.u)) < 1e-12
        assert np.max(np.abs(gr.v)) < 1e-12

    def test_gradient_sin_x(self):
        g = grid(64)
        f = scalar_from(g, lambda X, Y: np.sin(X))
        gr = spectral_gradient(f)
        X, _ = g.mesh()
        assert np.max(np.abs(gr.u - np.cos(X))) < 1e-10
        assert np.max(np.abs(gr.v)) < 1e-10

    def test_gradient_cos_3y(self):
        g = grid(64)
        f = scalar_from(g, lambda X, Y: np.cos(3 * Y))
        gr = spectral_gradient(f)
        _, Y = g.mesh()
        assert np.max(np.abs(gr.u)) < 1e-10
        assert np.max(np.abs(gr.v + 3.0 * np.sin(3 * Y))) < 1e-10

    def test_divergence_of_curl_field(self):
        # u = (-dpsi/dy, dpsi/dx) is divergence free for any smooth psi
        g = grid(64)
        psi = band_limited_noise(g, kmax=10, seed=3)
        gr = spectral_gradient(psi)
        vel = VectorField2D(g, -gr.v, gr.u)
        div = spectral_divergence(vel)
        assert np.max(np.abs(div.values)) < 1e-10

    def test_curl_of_gradient_vanishes(self):
        g = grid(64)
        f = band_limited_noise(g, kmax=10, seed=4)
        gr = spectral_gradient(f)
        w = spectral_curl(gr)
        assert np.max(np.abs(w.values)) < 1e-10


class TestInvertLaplacian:
    def test_zero(self):
        f = scalar_from(grid(32), lambda X, Y: np.zeros_like(X))
        psi = invert_laplacian_neg(f)
        assert np.all(psi.values == 0.0)

    def test_sin_x(self):
        # -Laplacian(sin x) = sin x, so the inverse returns sin x itself
        g = grid(64)
        f = scalar_from(g, lambda X, Y: np.sin(X))
        psi = invert_laplacian_neg(f)
        X, _ = g.mesh()
        assert np.max(np.abs(psi.values - np.sin(X))) < 1e-10

    def test_cos_2x(self):
        g = grid(64)
        f = scalar_from(g, lambda X, Y: np.cos(2 * X))
        psi = invert_laplacian_neg(f)
        X, _ = g.mesh()
        assert np.max(np.abs(psi.values - np.cos(2 * X) / 4.0)) < 1e-10

    def test_nonzero_mean_rejected(self):
        f = scalar_from(grid(32), lambda X, Y: np.sin(X) + 0.1)
        with pytest.raises(SolvabilityError):
            invert_laplacian_neg(f)

    def test_two_sided_inverse(self):
        g = grid(64)
        f = band_limited_noise(g, kmax=12, seed=5)
        kx, ky = g.wavenumbers()
        k2 = kx**2 + ky**2
        # forward: -Laplacian via spectral multiplier
        neg_lap = ScalarField2D(g, np.fft.ifft2(k2 * np.fft.fft2(f.values)).real)
        back = invert_laplacian_neg(neg_lap)
        assert np.max(np.abs(back.values - f.values)) < 1e-10
        fwd = invert_laplacian_neg(f)
        again = np.fft.ifft2(k2 * np.fft.fft2(fwd.values)).real
        assert np.max(np.abs(again - f.values)) < 1e-10


class TestFileRoundTrip:
    def test_scalar_round_trip(self, tmp_path):
        g = Grid2D(16, 16, 0.5, 7.5, -2.0, 2.0)
        rng = np.random.default_rng(6)
        f = ScalarField2D(g, rng.standard_normal((16, 16)), time=3.25)
        path = tmp_path / "f.f2d"
        fileio.write_field(f, path)
        back = fileio.read_field(path)
        assert isinstance(back, ScalarField2D)
        assert back.grid == g
        assert back.time == f.time
        assert np.array_equal(back.values, f.values)

    def test_vector_round_trip(self, tmp_path):
        g = grid(16)
        rng = np.random.default_rng(7)
        f = VectorField2D(g, rng.standard_normal((16, 16)), rng.standard_normal((16, 16)), 1.5)
        path = tmp_path / "v.f2d"
        fileio.write_field(f, path)
        back = fileio.read_field(path)
        assert isinstance(back, VectorField2D)
        assert np.array_equal(back.u, f.u)
        assert np.array_equal(back.v, f.v)

    def test_channels_round_trip(self, tmp_path):
        g = grid(16)
        rng = np.random.default_rng(8)
        chans = {name: rng.standard_normal((16, 16)) for name in ("a", "bb", "ccc")}
        path = tmp_path / "c.f2d"
        fileio.write_channels(path, fileio.KIND_FLOWMAP, g, 0.0, 10.0, chans)
        kind, g2, t, t_end, back = fileio.read_field(path)
        assert kind == fileio.KIND_FLOWMAP
        assert g2 == g and t == 0.0 and t_end == 10.0
        assert list(back) == list(chans)
        for name in chans:
            assert np.array_equal(back[name], chans[name])

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.f2d"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FieldFormatError):
            fileio.read_field(path)

    def test_truncated_payload(self, tmp_path):
        g = grid(16)
        f = ScalarField2D(g, np.zeros((16, 16)))
        path = tmp_path / "t.f2d"
        fileio.write_field(f, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-17])
        with pytest.raises(FieldFormatError):
            fileio.read_field(path)

    def test_oversized_payload(self, tmp_path):
        g = grid(16)
        f = ScalarField2D(g, np.zeros((16, 16)))
        path = tmp_path / "o.f2d"
        fileio.write_field(f, path)
        with open(path, "ab") as fh:
            fh.write(b"\x00" * 8)
        with pytest.raises(FieldFormatError):
            fileio.read_field(path)

    def test_series_round_trip(self, tmp_path):
        g = grid(16)
        rng = np.random.default_rng(9)
        series = VelocitySeries(
            g,
            np.array([0.0, 0.2, 0.4]),
            rng.standard_normal((3, 16, 16)),
            rng.standard_normal((3, 16, 16)),
        )
        manifest = fileio.write_series(series, tmp_path / "run")
        back = fileio.read_series(manifest)
        assert np.array_equal(back.times, series.times)
        for k in range(3):
            assert np.array_equal(back.frame(k).u, series.frame(k).u)
            assert np.array_equal(back.frame(k).v, series.frame(k).v)
