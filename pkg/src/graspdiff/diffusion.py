"""Stage-2: forward noising, denoising loss, ancestral and deterministic
samplers, all in the frozen grasp-latent space.

Timesteps are 1..T with alpha_bar(0) = 1.  The forward marginal uses the
variance-preserving form z_t = sqrt(ab_t) z_0 + sqrt(1 - ab_t) eps; the
ancestral sampler uses the standard update with sigma_t = sqrt(beta_t) and
no noise on the final step.  A `paper_literal_eq5` switch keeps the
non-standard update variant (noise inside the 1/sqrt(1-beta) factor, no
square root under 1 - ab) available for comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .dataset import ObjectRecord
from .models import (ModelConfig, encode_grasp, encode_pointcloud,
                     init_score_params, score_network)
from .numerics import AdamState, ParamStore, adam_step, gradients, step_lr
from .vae import sample_batch

logger = logging.getLogger(__name__)

EpsFn = Callable[[np.ndarray, int], np.ndarray]


class DiffusionSchedule:
    """Precomputed beta_t and alpha_bar_t tables for t = 1..T."""

    def __init__(self, betas: np.ndarray):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty vector")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("betas must lie strictly inside (0, 1)")
        self.betas = betas
        self.alpha_bars = np.cumprod(1.0 - betas)
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        self.sqrt_ab = np.sqrt(self.alpha_bars)
        self.sqrt_1m_ab = np.sqrt(1.0 - self.alpha_bars)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    @classmethod
    def linear(cls, timesteps: int = 1000, beta_start: float = 5e-5,
               beta_end: float = 1e-3) -> "DiffusionSchedule":
        if beta_end <= beta_start:
            raise ValueError("beta_end must exceed beta_start")
        return cls(np.linspace(beta_start, beta_end, timesteps))

    @classmethod
    def cosine(cls, timesteps: int = 1000, s: float = 0.008) -> "DiffusionSchedule":
        t = np.arange(timesteps + 1, dtype=np.float64)
        f = np.cos((t / timesteps + s) / (1.0 + s) * np.pi / 2.0) ** 2
        ab = f / f[0]
        betas = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, 0.999)
        return cls(betas)

    def alpha_bar(self, t):
        """alpha_bar for integer t in 0..T (0 maps to 1)."""
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr > self.T):
            raise ValueError(f"timestep out of range [0, {self.T}]")
        return np.where(t_arr > 0, self.alpha_bars[np.maximum(t_arr, 1) - 1], 1.0)


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ddpm"
    steps: int = 100  # ddim only
    eta: float = 0.0
    paper_literal_eq5: bool = False

    def __post_init__(self):
        if self.kind not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.steps <= 0 or self.eta < 0:
            raise ValueError("steps must be positive and eta non-negative")


def q_sample(z0: np.ndarray, t, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """Forward marginal draw z_t given z_0 and the supplied unit noise."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    ab = sched.alpha_bar(t)
    a = np.sqrt(ab)
    b = np.sqrt(1.0 - ab)
    if np.ndim(a) > 0:
        a = a[..., None]
        b = b[..., None]
    return a * z0 + b * eps


def diffusion_loss(z0: np.ndarray, z_pc, store: ParamStore, cfg: ModelConfig,
                   sched: DiffusionSchedule, rng: Optional[np.random.Generator],
                   task=None, t=None, eps=None) -> Tuple[Tensor, Dict[str, float]]:
    """Noise-prediction objective ||eps - eps_hat(z_t, t, cond)||^2.

    t and eps default to a uniform timestep draw and unit Gaussian noise;
    both can be injected for deterministic tests.
    """
    z0 = np.asarray(z0)
    batched = z0.ndim > 1
    if t is None:
        t = rng.integers(1, sched.T + 1, size=z0.shape[:-1] if batched else None)
    if eps is None:
        eps = rng.standard_normal(z0.shape)
    zt = q_sample(z0, t, eps, sched)
    eps_hat = score_network(zt, t, z_pc, store, cfg, task=task)
    diff = eps_hat - Tensor(np.asarray(eps, dtype=eps_hat.dtype))
    loss = (diff * diff).sum(axis=-1).mean()
    return loss, {"loss": loss.item()}


def ddpm_sample(eps_fn: EpsFn, n: int, dim: int, sched: DiffusionSchedule,
                rng: np.random.Generator, paper_literal: bool = False,
                record_at: Optional[Sequence[int]] = None):
    """Ancestral sampling from z_T ~ N(0, I) down to z_0.

    Returns (samples (n, dim), trajectory dict t -> latents) where the
    trajectory is only populated for timesteps listed in `record_at`.
    """
    z = rng.standard_normal((n, dim))
    record = set(record_at or ())
    traj: Dict[int, np.ndarray] = {}
    if sched.T in record:
        traj[sched.T] = z.copy()
    for t in range(sched.T, 0, -1):
        beta = sched.betas[t - 1]
        ab = sched.alpha_bars[t - 1]
        eps_hat = eps_fn(z, t)
        noise = rng.standard_normal(z.shape) if t > 1 else 0.0
        if paper_literal:
            z = (z - beta / (1.0 - ab) * eps_hat + np.sqrt(beta) * noise) / np.sqrt(1.0 - beta)
        else:
            z = (z - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta) \
                + np.sqrt(beta) * noise
        if t - 1 in record:
            traj[t - 1] = z.copy()
    return z, traj


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Descending knot sequence T = tau_0 > ... > tau_steps = 0."""
    if steps > T:
        raise ValueError(f"ddim steps ({steps}) cannot exceed T ({T})")
    taus = np.unique(np.round(np.linspace(0, T, steps + 1)).astype(int))
    return taus[::-1]


def ddim_sample(eps_fn: EpsFn, n: int, dim: int, sched: DiffusionSchedule,
                steps: int, eta: float = 0.0,
                rng: Optional[np.random.Generator] = None,
                z_init: Optional[np.ndarray] = None,
                record_at: Optional[Sequence[int]] = None):
    """Few-step sampler over an evenly spaced timestep subsequence.

    With eta = 0 the update is a deterministic function of (z_T, cond); no
    retraining of the noise predictor is required.
    """
    if z_init is not None:
        z = np.array(z_init, dtype=np.float64, copy=True)
    else:
        if rng is None:
            raise ValueError("need an rng when z_init is not supplied")
        z = rng.standard_normal((n, dim))
    if eta > 0 and rng is None:
        raise ValueError("need an rng for stochastic (eta > 0) sampling")
    taus = ddim_timesteps(sched.T, steps)
    record = set(record_at or ())
    traj: Dict[int, np.ndarray] = {}
    if sched.T in record:
        traj[sched.T] = z.copy()
    for t_cur, t_next in zip(taus[:-1], taus[1:]):
        ab = float(sched.alpha_bar(int(t_cur)))
        ab_next = float(sched.alpha_bar(int(t_next)))
        eps_hat = eps_fn(z, int(t_cur))
        z0_hat = (z - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
        if eta > 0 and t_next > 0:
            sigma = eta * np.sqrt((1.0 - ab_next) / (1.0 - ab)) \
                * np.sqrt(1.0 - ab / ab_next)
            sigma = min(sigma, np.sqrt(1.0 - ab_next))
        else:
            sigma = 0.0
        dir_coeff = np.sqrt(max(1.0 - ab_next - sigma * sigma, 0.0))
        z = np.sqrt(ab_next) * z0_hat + dir_coeff * eps_hat
        if sigma > 0:
            z = z + sigma * rng.standard_normal(z.shape)
        if int(t_next) in record:
            traj[int(t_next)] = z.copy()
    return z, traj


def make_latent_denoiser(store: ParamStore, cfg: ModelConfig, z_pc: np.ndarray,
                         task=None) -> EpsFn:
    """Wrap the trained noise predictor as eps_fn(z, t) over frozen params."""

    def eps_fn(z: np.ndarray, t: int) -> np.ndarray:
        return score_network(z, t, z_pc, store, cfg, task=task).data.astype(np.float64)

    return eps_fn


def sample_latents(store: ParamStore, cfg: ModelConfig, z_pc: np.ndarray,
                   sampler: SamplerConfig, sched: DiffusionSchedule,
                   rng: np.random.Generator, n: int, task=None,
                   record_at: Optional[Sequence[int]] = None):
    """Reverse-diffusion latents (n, k) under either sampler."""
    eps_fn = make_latent_denoiser(store, cfg, z_pc, task=task)
    if sampler.kind == "ddpm":
        return ddpm_sample(eps_fn, n, cfg.z_h_dim, sched, rng,
                           paper_literal=sampler.paper_literal_eq5,
                           record_at=record_at)
    return ddim_sample(eps_fn, n, cfg.z_h_dim, sched, sampler.steps,
                       eta=sampler.eta, rng=rng, record_at=record_at)


@dataclass(frozen=True)
class LdmTrainConfig:
    total_steps: int = 3000
    batch_size: int = 64
    grasps_per_object: int = 1
    base_lr: float = 1e-3
    jitter_sd: float = 0.01
    max_dropout: float = 0.4
    log_every: int = 25


def train_ldm(vae_store: ParamStore, objects: Sequence[ObjectRecord],
              mcfg: ModelConfig, tcfg: LdmTrainConfig, sched: DiffusionSchedule,
              seed: int, task_enabled: bool = False, dtype=np.float32,
              resume_store: Optional[ParamStore] = None, start_step: int = 0
              ) -> Tuple[ParamStore, List[dict]]:
    """Fit the noise predictor in the frozen grasp-latent space.

    The stage-1 parameters are copied and never updated; z_0 is drawn from
    the frozen posterior of each (cloud, grasp) pair, with the same online
    augmentation as stage 1.
    """
    if not objects:
        raise ValueError("cannot train on an empty dataset")
    frozen = vae_store.copy()
    frozen.set_requires_grad(False)
    ss = np.random.SeedSequence(seed)
    init_seed, *step_seeds = ss.spawn(tcfg.total_steps + 1)
    if resume_store is not None:
        store = resume_store
    else:
        store = init_score_params(mcfg, np.random.default_rng(init_seed), dtype=dtype,
                                  task_classes=3 if task_enabled else 0)
    adam = AdamState(lr=tcfg.base_lr)
    rows: List[dict] = []
    for step in range(start_step, tcfg.total_steps):
        rng = np.random.default_rng(step_seeds[step])
        pts, hs, labels, owner = sample_batch(objects, tcfg.batch_size, rng,
                                              tcfg.jitter_sd, tcfg.max_dropout,
                                              tcfg.grasps_per_object)
        z_pc = encode_pointcloud(pts.astype(dtype), frozen, mcfg).data[owner]
        mu, logvar = encode_grasp(hs.astype(dtype), z_pc, frozen, mcfg)
        post_eps = rng.standard_normal(mu.shape)
        z0 = mu.data + np.exp(0.5 * logvar.data) * post_eps
        task = labels if task_enabled else None
        loss, _ = diffusion_loss(z0, z_pc, store, mcfg, sched, rng, task=task)
        value = loss.item()
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite loss at step {step}")
        grads = gradients(loss, store)
        adam_step(store, grads, adam, lr=step_lr(step, tcfg.total_steps, tcfg.base_lr))
        if step % tcfg.log_every == 0 or step == tcfg.total_steps - 1:
            rows.append({"step": step, "loss": value,
                         "lr": step_lr(step, tcfg.total_steps, tcfg.base_lr)})
    if rows:
        logger.info("stage-2 done: loss %.5f", rows[-1]["loss"])
    return store, rows
