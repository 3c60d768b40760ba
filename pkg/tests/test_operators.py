"""Forward operator, adjoint, subsampling, and noise.

The matrix-free operators are checked against a dense system matrix that is
assembled here by a deliberately plain per-arc loop, independent of the
vectorized implementation in the package.
"""

import math

import numpy as np
import pytest

from pactcs import (
    Image,
    add_noise,
    adjoint,
    apply_mask,
    embed_mask,
    forward,
    forward_geometry,
    make_grid,
    make_mask,
    make_sensor_array,
    spherical_mean,
)
from pactcs.operators import max_pixel_sensor_distance

from conftest import rel_err


def dense_arc_matrix(geom) -> np.ndarray:
    """Brute-force (channels*samples, pixels) arc-weight matrix."""
    grid, sensors = geom.grid, geom.sensors
    nx, ny = grid.nx, grid.ny
    ox, oy = grid.origin
    ns = geom.n_samples
    w = np.zeros((sensors.count * ns, nx * ny))
    for ich in range(sensors.count):
        sx, sy = sensors.positions[ich]
        for k in range(ns):
            r = geom.sound_speed * (geom.t0 + k * geom.dt)
            if r <= 0.0:
                continue
            n_arc = math.ceil(2 * math.pi * r / (grid.dx / 2))
            seg = 2 * math.pi * r / n_arc
            for m in range(n_arc):
                th = 2 * math.pi * (m + 0.5) / n_arc
                u = (sx + r * math.cos(th) - ox) / grid.dx
                v = (sy + r * math.sin(th) - oy) / grid.dx
                if not (0.0 <= u <= nx - 1 and 0.0 <= v <= ny - 1):
                    continue
                i0 = min(int(u), nx - 2)
                j0 = min(int(v), ny - 2)
                fu, fv = u - i0, v - j0
                row = ich * ns + k
                w[row, j0 * nx + i0] += seg * (1 - fu) * (1 - fv)
                w[row, j0 * nx + i0 + 1] += seg * fu * (1 - fv)
                w[row, (j0 + 1) * nx + i0] += seg * (1 - fu) * fv
                w[row, (j0 + 1) * nx + i0 + 1] += seg * fu * fv
    return w


def dense_forward_matrix(geom) -> np.ndarray:
    """Full dense forward map: derivative o scaling o arc integration."""
    ns = geom.n_samples
    t = np.maximum(geom.t0 + geom.dt * np.arange(ns), geom.dt)
    scale = 1.0 / (4 * np.pi * geom.sound_speed**3 * t)
    deriv = np.zeros((ns, ns))
    deriv[0, 0], deriv[0, 1] = -1, 1
    deriv[ns - 1, ns - 2], deriv[ns - 1, ns - 1] = -1, 1
    for k in range(1, ns - 1):
        deriv[k, k - 1], deriv[k, k + 1] = -0.5, 0.5
    deriv /= geom.dt
    per_channel = deriv @ np.diag(scale)
    blocks = np.kron(np.eye(geom.sensors.count), per_channel)
    return blocks @ dense_arc_matrix(geom)


class TestDenseOracle:
    def test_spherical_mean_matches_dense_weights(self, small_geom):
        w = dense_arc_matrix(small_geom)
        rng = np.random.default_rng(0)
        f = rng.standard_normal(small_geom.grid.shape)
        out = spherical_mean(Image(small_geom.grid, f), small_geom)
        assert np.abs(out.data.reshape(-1) - w @ f.reshape(-1)).max() < 1e-12

    def test_unit_impulse_extracts_matrix_column(self, small_geom):
        w = dense_arc_matrix(small_geom)
        pix = (5, 11)  # (iy, ix)
        f = np.zeros(small_geom.grid.shape)
        f[pix] = 1.0
        out = spherical_mean(Image(small_geom.grid, f), small_geom)
        col = w[:, pix[0] * small_geom.grid.nx + pix[1]]
        assert np.abs(out.data.reshape(-1) - col).max() < 1e-12

    def test_forward_matches_dense_matrix(self):
        geom = forward_geometry(make_grid(24, 24, 0.030), make_sensor_array(8, 0.0145))
        a = dense_forward_matrix(geom)
        rng = np.random.default_rng(1)
        f = rng.standard_normal(geom.grid.shape)
        out = forward(Image(geom.grid, f), geom)
        assert np.abs(out.data.reshape(-1) - a @ f.reshape(-1)).max() < 1e-12

    def test_adjoint_matches_dense_transpose(self):
        geom = forward_geometry(make_grid(16, 16, 0.030), make_sensor_array(8, 0.0145))
        a = dense_forward_matrix(geom)
        rng = np.random.default_rng(2)
        g = rng.standard_normal(geom.sino_shape)
        out = adjoint(geom.empty_like(g), geom)
        assert np.abs(out.values.reshape(-1) - a.T @ g.reshape(-1)).max() < 1e-12


class TestForward:
    def test_zero_image_gives_zero_sinogram(self, small_geom):
        out = forward(Image(small_geom.grid, np.zeros(small_geom.grid.shape)), small_geom)
        assert not out.data.any()

    def test_linearity(self, small_geom):
        rng = np.random.default_rng(3)
        f = rng.standard_normal(small_geom.grid.shape)
        g = rng.standard_normal(small_geom.grid.shape)
        lhs = forward(Image(small_geom.grid, 2.5 * f + 0.7 * g), small_geom).data
        rhs = (
            2.5 * forward(Image(small_geom.grid, f), small_geom).data
            + 0.7 * forward(Image(small_geom.grid, g), small_geom).data
        )
        assert rel_err(lhs, rhs) < 1e-12

    def test_centered_impulse_trace_is_bipolar(self):
        # odd grid puts one pixel exactly at the array center
        grid = make_grid(17, 17, 0.030)
        geom = forward_geometry(grid, make_sensor_array(8, 0.0145))
        f = np.zeros(grid.shape)
        f[8, 8] = 1.0
        out = forward(Image(grid, f), geom).data
        arrival = geom.sensors.radius / geom.sound_speed / geom.dt
        for trace in out:
            k_max, k_min = np.argmax(trace), np.argmin(trace)
            assert trace[k_max] > 0 > trace[k_min]
            assert k_max < k_min  # positive lobe first: rising then falling mean
            assert abs(k_max - arrival) < 6
            assert abs(k_min - arrival) < 6
        # rotational symmetry: identical timing everywhere, amplitudes equal up
        # to the arc discretization of a one-pixel source
        assert len({int(np.argmax(t)) for t in out}) == 1
        assert len({int(np.argmin(t)) for t in out}) == 1
        assert np.abs(out - out[0]).max() < 0.2 * np.abs(out).max()

    def test_grid_mismatch_rejected(self, small_geom):
        wrong = Image(make_grid(8, 8, 0.030), np.zeros((8, 8)))
        with pytest.raises(ValueError):
            forward(wrong, small_geom)

    def test_time_axis_must_cover_grid(self):
        grid = make_grid(16, 16, 0.030)
        sensors = make_sensor_array(8, 0.0145)
        with pytest.raises(ValueError):
            forward_geometry(grid, sensors, n_samples=10)


class TestAdjoint:
    def test_zero_sinogram_gives_zero_image(self, small_geom):
        out = adjoint(small_geom.empty_like(np.zeros(small_geom.sino_shape)), small_geom)
        assert not out.values.any()

    def test_dot_product_identity(self, small_geom):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(100):
            f = rng.standard_normal(small_geom.grid.shape)
            g = rng.standard_normal(small_geom.sino_shape)
            af = forward(Image(small_geom.grid, f), small_geom)
            atg = adjoint(small_geom.empty_like(g), small_geom)
            lhs = float(np.vdot(af.data, g))
            rhs = float(np.vdot(f, atg.values))
            denom = np.linalg.norm(af.data) * np.linalg.norm(g)
            worst = max(worst, abs(lhs - rhs) / denom)
        assert worst < 1e-10

    def test_masked_composition_is_adjoint_pair(self, small_geom):
        rng = np.random.default_rng(5)
        mask = make_mask(8, 0.5, "uniform")
        for _ in range(20):
            f = rng.standard_normal(small_geom.grid.shape)
            g = rng.standard_normal((mask.n_kept, small_geom.n_samples))
            mf = apply_mask(forward(Image(small_geom.grid, f), small_geom), mask)
            mtg = adjoint(embed_mask(small_geom.empty_like(g), mask), small_geom)
            lhs = float(np.vdot(mf.data, g))
            rhs = float(np.vdot(f, mtg.values))
            assert abs(lhs - rhs) / (np.linalg.norm(mf.data) * np.linalg.norm(g)) < 1e-10


class TestMask:
    def test_paper_fifty_percent_uniform(self):
        m = make_mask(128, 0.5, "uniform")
        assert m.n_kept == 64
        assert np.array_equal(m.kept, np.arange(0, 128, 2))

    def test_full_sampling_is_identity(self):
        m = make_mask(128, 1.0, "uniform")
        assert m.is_identity()
        assert np.array_equal(m.kept, np.arange(128))

    def test_random_scheme_is_deterministic(self):
        a = make_mask(8, 0.5, "random", seed=7)
        b = make_mask(8, 0.5, "random", seed=7)
        assert np.array_equal(a.kept, b.kept)
        assert a.n_kept == 4

    @pytest.mark.parametrize("frac", [0.0, -0.5, 1.5])
    def test_invalid_fraction(self, frac):
        with pytest.raises(ValueError):
            make_mask(8, frac)

    def test_apply_embed_round_trip(self, small_geom):
        rng = np.random.default_rng(6)
        mask = make_mask(8, 0.5, "random", seed=1)
        reduced = small_geom.empty_like(
            rng.standard_normal((mask.n_kept, small_geom.n_samples))
        )
        back = apply_mask(embed_mask(reduced, mask), mask)
        assert np.array_equal(back.data, reduced.data)

    def test_embed_apply_zeroes_dropped_rows(self, small_geom):
        rng = np.random.default_rng(7)
        mask = make_mask(8, 0.5, "uniform")
        full = small_geom.empty_like(rng.standard_normal(small_geom.sino_shape))
        proj = embed_mask(apply_mask(full, mask), mask)
        dropped = np.setdiff1d(np.arange(8), mask.kept)
        assert not proj.data[dropped].any()
        assert np.array_equal(proj.data[mask.kept], full.data[mask.kept])

    def test_apply_embed_adjoint_pair(self, small_geom):
        rng = np.random.default_rng(8)
        mask = make_mask(8, 0.625, "random", seed=3)
        x = rng.standard_normal(small_geom.sino_shape)
        y = rng.standard_normal((mask.n_kept, small_geom.n_samples))
        lhs = np.vdot(apply_mask(small_geom.empty_like(x), mask).data, y)
        rhs = np.vdot(x, embed_mask(small_geom.empty_like(y), mask).data)
        assert abs(lhs - rhs) <= 1e-15 * max(abs(lhs), 1.0)


class TestNoise:
    def _signal(self, small_geom):
        rng = np.random.default_rng(9)
        return small_geom.empty_like(rng.standard_normal(small_geom.sino_shape))

    def test_target_snr_is_achieved(self):
        # big sinogram so the empirical SNR concentrates (N >= 1e4)
        grid = make_grid(64, 64, 0.030)
        geom = forward_geometry(grid, make_sensor_array(128, 0.0145))
        rng = np.random.default_rng(10)
        s = geom.empty_like(rng.standard_normal(geom.sino_shape))
        noisy = add_noise(s, 40.0, seed=11)
        e = noisy.data - s.data
        measured = 10 * np.log10(np.mean(s.data**2) / np.mean(e**2))
        assert 39.5 <= measured <= 40.5

    def test_infinite_snr_is_identity(self, small_geom):
        s = self._signal(small_geom)
        assert add_noise(s, math.inf, seed=0) is s

    def test_seed_determinism(self, small_geom):
        s = self._signal(small_geom)
        a = add_noise(s, 30.0, seed=42)
        b = add_noise(s, 30.0, seed=42)
        assert np.array_equal(a.data, b.data)

    def test_zero_sinogram_rejected(self, small_geom):
        s = small_geom.empty_like(np.zeros(small_geom.sino_shape))
        with pytest.raises(ValueError):
            add_noise(s, 40.0, seed=0)


def test_geometry_coverage_invariant(small_geom):
    reach = small_geom.sound_speed * (
        small_geom.t0 + small_geom.n_samples * small_geom.dt
    )
    assert reach >= max_pixel_sensor_distance(small_geom.grid, small_geom.sensors)
