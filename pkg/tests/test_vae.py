"""ELBO pieces: closed-form KL vs Monte Carlo, the annealing schedule,
reparameterization, loss decomposition, and gradient correctness."""

import numpy as np
import pytest

import graspdiff.vae as vae_mod
from graspdiff.autodiff import Tensor
from graspdiff.models import ModelConfig, init_vae_params
from graspdiff.numerics import gradients
from graspdiff.vae import (ElboConfig, VaeTrainConfig, elbo_loss, kl_gaussian,
                           lambda_schedule, train_vae)

from conftest import finite_difference, max_rel_error


class TestKl:
    def test_standard_normal_is_zero(self):
        kl = kl_gaussian(Tensor(np.zeros(4)), Tensor(np.zeros(4)))
        assert kl.item() == 0.0

    def test_unit_mean_shift(self):
        kl = kl_gaussian(Tensor(np.array([1.0])), Tensor(np.array([0.0])))
        assert kl.item() == pytest.approx(0.5)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(0)
        mu = np.array([0.4, -1.2, 0.7])
        logvar = np.array([0.3, -0.8, 0.1])
        sigma = np.exp(0.5 * logvar)
        n = 1_000_000
        x = mu + sigma * rng.standard_normal((n, 3))
        # E_q[log q(x) - log p(x)] with q = N(mu, sigma^2), p = N(0, I)
        log_q = -0.5 * (((x - mu) / sigma) ** 2 + np.log(2 * np.pi) + logvar)
        log_p = -0.5 * (x ** 2 + np.log(2 * np.pi))
        ratio = (log_q - log_p).sum(axis=1)
        mc, se = ratio.mean(), ratio.std(ddof=1) / np.sqrt(n)
        closed = kl_gaussian(Tensor(mu), Tensor(logvar)).item()
        assert abs(closed - mc) < 3 * se


class TestLambdaSchedule:
    CFG = ElboConfig(total_steps=1000)

    def test_start(self):
        assert lambda_schedule(0, self.CFG) == pytest.approx(1e-7)

    def test_end_of_ramp_and_hold(self):
        assert lambda_schedule(500, self.CFG) == 0.1
        assert lambda_schedule(750, self.CFG) == 0.1
        assert lambda_schedule(1000, self.CFG) == 0.1

    def test_linear_midpoint(self):
        # halfway through the anneal segment
        assert lambda_schedule(250, self.CFG) == pytest.approx(0.05000005, rel=1e-9)

    def test_monotone_nondecreasing(self):
        values = [lambda_schedule(s, self.CFG) for s in range(0, 1001, 25)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            lambda_schedule(1001, self.CFG)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            ElboConfig(total_steps=100, lambda_start=0.2, lambda_end=0.1)
        with pytest.raises(ValueError):
            ElboConfig(total_steps=100, anneal_fraction=0.0)


class TestElboLoss:
    def _setup(self, tiny_model_cfg, seed=1):
        store = init_vae_params(tiny_model_cfg, np.random.default_rng(seed),
                                dtype=np.float64)
        rng = np.random.default_rng(seed + 1)
        pts = rng.normal(size=(tiny_model_cfg.n_points, 3)) * 0.05
        h = rng.normal(size=6)
        return store, pts, h

    def test_zero_reconstruction_gives_lambda_kl_only(self, tiny_model_cfg,
                                                      monkeypatch):
        store, pts, h = self._setup(tiny_model_cfg)
        # force a perfect decoder: loss must collapse to lambda * KL
        monkeypatch.setattr(vae_mod, "decode_grasp",
                            lambda z_h, z_pc, s, c: Tensor(h) * 1.0)
        loss0, m0 = elbo_loss(h, pts, store, tiny_model_cfg, 0.0,
                              np.random.default_rng(2))
        assert loss0.item() == 0.0
        loss1, m1 = elbo_loss(h, pts, store, tiny_model_cfg, 0.25,
                              np.random.default_rng(2))
        assert loss1.item() == pytest.approx(0.25 * m1["kl"], rel=1e-12)

    def test_loss_bounded_below_by_weighted_kl(self, tiny_model_cfg):
        store, pts, h = self._setup(tiny_model_cfg, seed=3)
        lam = 0.1
        loss, m = elbo_loss(h, pts, store, tiny_model_cfg, lam,
                            np.random.default_rng(4))
        assert loss.item() >= 0.0
        assert loss.item() >= lam * m["kl"] - 1e-12
        assert loss.item() == pytest.approx(m["recon"] + lam * m["kl"], rel=1e-9)

    def test_reparameterization_zero_noise_uses_mean(self, tiny_model_cfg,
                                                     monkeypatch):
        store, pts, h = self._setup(tiny_model_cfg, seed=5)
        seen = {}
        from graspdiff.models import decode_grasp as real_decode

        def spy(z_h, z_pc, s, c):
            seen["z"] = z_h.data.copy()
            return real_decode(z_h, z_pc, s, c)

        monkeypatch.setattr(vae_mod, "decode_grasp", spy)
        elbo_loss(h, pts, store, tiny_model_cfg, 0.1, None,
                  noise=np.zeros(tiny_model_cfg.z_h_dim))
        from graspdiff.models import encode_grasp, encode_pointcloud
        z_pc = encode_pointcloud(pts, store, tiny_model_cfg)
        mu, _ = encode_grasp(h, z_pc, store, tiny_model_cfg)
        assert np.array_equal(seen["z"], mu.data)

    def test_gradient_matches_finite_difference(self, tiny_model_cfg):
        store, pts, h = self._setup(tiny_model_cfg, seed=6)
        noise = np.random.default_rng(7).standard_normal(tiny_model_cfg.z_h_dim)
        loss, _ = elbo_loss(h, pts, store, tiny_model_cfg, 0.1, None, noise=noise)
        analytic = gradients(loss, store)

        arrays = {name: p.data.copy() for name, p in store.items()}

        def f(arrs):
            trial = init_vae_params(tiny_model_cfg, np.random.default_rng(0),
                                    dtype=np.float64)
            for name, p in trial.items():
                p.data[...] = arrs[name]
            val, _ = elbo_loss(h, pts, trial, tiny_model_cfg, 0.1, None,
                               noise=noise)
            return val.item()

        numeric = finite_difference(f, arrays, h=1e-5)
        assert max_rel_error(analytic, numeric) < 1e-4


class TestTrainVae:
    def test_smoke_and_determinism(self, small_objects, tiny_model_cfg):
        tcfg = VaeTrainConfig(total_steps=40, batch_size=2, grasps_per_object=2,
                              log_every=10)
        small_cfg = tiny_model_cfg
        # point counts must match the dataset fixture
        cfg = ModelConfig(n_points=64, pc_widths=(8, 12), z_pc_dim=8, z_h_dim=2,
                          block_width=12, n_blocks=2, cond_dim=8, timesteps=20)
        store_a, rows_a = train_vae(small_objects, cfg, tcfg, seed=11)
        store_b, rows_b = train_vae(small_objects, cfg, tcfg, seed=11)
        assert rows_a[-1]["loss"] == rows_b[-1]["loss"]
        for name, p in store_a.items():
            assert np.array_equal(p.data, store_b[name].data)
        assert all(np.isfinite(r["loss"]) for r in rows_a)
        assert rows_a[-1]["loss"] < rows_a[0]["loss"]
        assert any(r["kl"] > 0 for r in rows_a)

    def test_empty_dataset_rejected(self, tiny_model_cfg):
        with pytest.raises(ValueError, match="empty"):
            train_vae([], tiny_model_cfg, VaeTrainConfig(total_steps=5), seed=0)
