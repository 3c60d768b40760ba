"""Loss-term gradients and the untrained-decoder solver loop."""

import numpy as np
import pytest

from pactcs import (
    Image,
    apply_mask,
    forward,
    forward_geometry,
    make_grid,
    make_mask,
    make_sensor_array,
)
from pactcs.decoder import DecoderArch
from pactcs.dip import (
    DipConfig,
    arch_for_grid,
    dc_gradient,
    dip_reconstruct,
    sp_gradient,
    tv_gradient_smoothed,
)
from pactcs.phantoms import disc_phantom
from pactcs.recon import ubp

from conftest import rel_err


@pytest.fixture
def desk16():
    grid = make_grid(16, 16, 0.030)
    geom = forward_geometry(grid, make_sensor_array(8, 0.0145))
    mask = make_mask(8, 0.5, "uniform")
    truth = disc_phantom(grid, [(0.002, -0.001)], [0.005], [1.0])
    b = apply_mask(forward(truth, geom), mask)
    return geom, mask, truth, b


class TestDcGradient:
    def test_zero_residual_gives_zero_gradient(self, desk16):
        geom, mask, truth, b = desk16
        g, loss = dc_gradient(truth, b, mask, geom)
        assert loss == 0.0
        assert not g.any()

    def test_matches_finite_differences(self, desk16):
        geom, mask, truth, b = desk16
        rng = np.random.default_rng(0)
        x = rng.standard_normal(geom.grid.shape)
        g, loss = dc_gradient(Image(geom.grid, x), b, mask, geom)
        h = 1e-6
        for iy, ix in [(3, 4), (8, 8), (15, 0), (0, 15), (10, 2)]:
            xp = x.copy()
            xp[iy, ix] += h
            _, lp = dc_gradient(Image(geom.grid, xp), b, mask, geom)
            xm = x.copy()
            xm[iy, ix] -= h
            _, lm = dc_gradient(Image(geom.grid, xm), b, mask, geom)
            fd = (lp - lm) / (2 * h)
            assert abs(fd - g[iy, ix]) / max(abs(fd), abs(g[iy, ix])) < 1e-5

    def test_gradient_linear_in_residual(self, desk16):
        geom, mask, truth, b = desk16
        x = Image(geom.grid, 2.0 * truth.values)  # residual = forward(truth)
        g1, _ = dc_gradient(x, b, mask, geom)
        x2 = Image(geom.grid, 3.0 * truth.values)  # doubled residual
        g2, _ = dc_gradient(x2, b, mask, geom)
        assert rel_err(g2, 2.0 * g1) < 1e-12

    def test_reduced_sinogram_enforced(self, desk16):
        geom, mask, truth, _ = desk16
        full = forward(truth, geom)
        with pytest.raises(ValueError):
            dc_gradient(truth, full, mask, geom)


class TestTvGradientSmoothed:
    def test_constant_image_has_zero_gradient(self):
        g, v = tv_gradient_smoothed(np.full((9, 9), 2.5), eps=1e-3)
        assert np.abs(g).max() < 1e-3 * 81
        assert v == pytest.approx(2 * 9 * 8 * 1e-3, rel=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((8, 8))
        eps = 1e-3
        g, _ = tv_gradient_smoothed(x, eps)
        h = 1e-7
        fd = np.zeros_like(x)
        for iy in range(8):
            for ix in range(8):
                xp, xm = x.copy(), x.copy()
                xp[iy, ix] += h
                xm[iy, ix] -= h
                fd[iy, ix] = (
                    tv_gradient_smoothed(xp, eps)[1] - tv_gradient_smoothed(xm, eps)[1]
                ) / (2 * h)
        assert rel_err(fd, g) < 1e-5

    def test_approaches_seminorm_as_eps_vanishes(self):
        from pactcs.recon import tv_seminorm

        rng = np.random.default_rng(2)
        x = rng.standard_normal((12, 12))
        eps = 1e-9
        _, value = tv_gradient_smoothed(x, eps)
        assert abs(value - tv_seminorm(x)) <= eps * 2 * x.size

    def test_positive_eps_required(self):
        with pytest.raises(ValueError):
            tv_gradient_smoothed(np.zeros((4, 4)), 0.0)


class TestSpGradient:
    def test_identity_at_target(self):
        rng = np.random.default_rng(3)
        f = rng.standard_normal((6, 6))
        g, loss = sp_gradient(f, f)
        assert loss == 0.0 and not g.any()

    def test_constant_offset_closed_form(self):
        f = np.random.default_rng(4).standard_normal((5, 5))
        g, loss = sp_gradient(f + 1.0, f)
        assert loss == pytest.approx(25 / 2)
        assert np.allclose(g, 1.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((7, 7))
        t = rng.standard_normal((7, 7))
        g, _ = sp_gradient(x, t)
        h = 1e-6
        xp, xm = x.copy(), x.copy()
        xp[2, 3] += h
        xm[2, 3] -= h
        fd = (sp_gradient(xp, t)[1] - sp_gradient(xm, t)[1]) / (2 * h)
        assert abs(fd - g[2, 3]) < 1e-6 * max(1.0, abs(fd))

    def test_grid_mismatch_rejected(self):
        a = Image(make_grid(4, 4, 1.0), np.zeros((4, 4)))
        b = Image(make_grid(5, 5, 1.0), np.zeros((5, 5)))
        with pytest.raises(ValueError):
            sp_gradient(a, b)


class TestArchForGrid:
    def test_64_grid_uses_three_doublings(self):
        arch = arch_for_grid(make_grid(64, 64, 0.03), DipConfig(channels=16))
        assert arch.output_hw == 64
        assert arch.upsample_blocks == frozenset({1, 2, 3})
        assert arch.n_blocks == 5

    def test_128_grid_uses_four_doublings(self):
        arch = arch_for_grid(make_grid(128, 128, 0.03), DipConfig())
        assert arch == DecoderArch()

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError):
            arch_for_grid(make_grid(48, 48, 0.03), DipConfig())


class TestDipReconstruct:
    def _problem(self, seed=0):
        grid = make_grid(16, 16, 0.030)
        geom = forward_geometry(grid, make_sensor_array(8, 0.0145))
        mask = make_mask(8, 0.5, "uniform")
        truth = disc_phantom(grid, [(0.0, 0.002)], [0.005], [1.0])
        b = apply_mask(forward(truth, geom), mask)
        scale = 3.0 / np.abs(b.data).max()
        b = b.with_data(b.data * scale)
        f_d = ubp(b, geom, mask)
        return geom, mask, truth, b, f_d

    def test_determinism(self):
        geom, mask, truth, b, f_d = self._problem()
        cfg = DipConfig(iters=30, seed=11, channels=4, input_hw=4, snapshot_every=10)
        a = dip_reconstruct(b, mask, geom, f_d, cfg)
        c = dip_reconstruct(b, mask, geom, f_d, cfg)
        assert np.array_equal(a.image.values, c.image.values)
        assert np.array_equal(a.history, c.history)
        for (ia, sa), (ic, sc) in zip(a.snapshots, c.snapshots):
            assert ia == ic and np.array_equal(sa.values, sc.values)

    def test_history_layout_and_snapshots(self):
        geom, mask, truth, b, f_d = self._problem()
        cfg = DipConfig(iters=25, seed=1, channels=4, input_hw=4, snapshot_every=10)
        res = dip_reconstruct(b, mask, geom, f_d, cfg)
        assert res.history.shape == (25, 5)
        assert [it for it, _ in res.snapshots] == [10, 20]
        assert np.array_equal(res.history[:, 0], np.arange(25))
        total = res.history[:, 1] + cfg.lambda_tv * res.history[:, 2] + cfg.lambda_shape * res.history[:, 3]
        assert np.allclose(total, res.history[:, 4], rtol=1e-12)

    def test_pure_dc_loss_drops_ten_fold(self):
        grid = make_grid(32, 32, 0.030)
        geom = forward_geometry(grid, make_sensor_array(16, 0.0145))
        mask = make_mask(16, 0.5, "uniform")
        truth = disc_phantom(grid, [(0.0, 0.002), (-0.005, -0.004)], [0.005, 0.003], [1.0, 0.7])
        b = apply_mask(forward(truth, geom), mask)
        b = b.with_data(b.data / np.abs(b.data).max())
        f_d = ubp(b, geom, mask)
        cfg = DipConfig(
            lambda_tv=0.0, lambda_shape=0.0, iters=700, seed=2, channels=16,
            input_hw=4, snapshot_every=0,
        )
        res = dip_reconstruct(b, mask, geom, f_d, cfg)
        assert res.history[-1, 1] <= res.history[0, 1] / 10.0

    def test_huge_shape_prior_reproduces_f_d(self):
        from pactcs.metrics import minmax, ssim

        geom, mask, truth, b, f_d = self._problem()
        cfg = DipConfig(
            lambda_tv=0.0, lambda_shape=1e3, iters=700, seed=3, channels=8,
            input_hw=4, snapshot_every=0,
        )
        res = dip_reconstruct(b, mask, geom, f_d, cfg)
        prior = minmax(Image(geom.grid, np.clip(f_d.values, 0.0, None)))
        assert ssim(res.image, prior) > 0.95

    def test_shape_prior_loss_monotone_in_weight(self):
        geom, mask, truth, b, f_d = self._problem()
        finals = []
        for lam2 in (0.01, 0.1, 1.0):
            vals = []
            for seed in (5, 6, 7):
                cfg = DipConfig(
                    lambda_tv=0.0, lambda_shape=lam2, iters=150, seed=seed,
                    channels=4, input_hw=4, snapshot_every=0,
                )
                res = dip_reconstruct(b, mask, geom, f_d, cfg)
                vals.append(res.history[-1, 3])
            finals.append(np.mean(vals))
        assert finals[0] >= finals[1] >= finals[2]

    def test_wrong_prior_grid_rejected(self):
        geom, mask, truth, b, f_d = self._problem()
        bad = Image(make_grid(8, 8, 0.03), np.zeros((8, 8)))
        with pytest.raises(ValueError):
            dip_reconstruct(b, mask, geom, bad, DipConfig(channels=4, input_hw=4))

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            DipConfig(lambda_tv=-1.0)
        with pytest.raises(ValueError):
            DipConfig(iters=0)
        with pytest.raises(ValueError):
            DipConfig(tv_epsilon=0.0)
