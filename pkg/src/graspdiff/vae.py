"""Stage-1 training: conditional VAE objective with KL annealing.

Minimizing `reconstruction + lambda * KL` maximizes the evidence lower
bound under a Gaussian likelihood; lambda ramps linearly from a tiny value
so the KL term cannot vanish early (posterior collapse), then holds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .dataset import REGION_LABELS, ObjectRecord, augment
from .geometry import pose_to_h
from .models import (ModelConfig, decode_grasp, encode_grasp, encode_pointcloud,
                     init_vae_params)
from .numerics import AdamState, ParamStore, adam_step, gradients, step_lr

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElboConfig:
    total_steps: int
    lambda_start: float = 1e-7
    lambda_end: float = 0.1
    anneal_fraction: float = 0.5

    def __post_init__(self):
        if not 0 < self.lambda_start <= self.lambda_end:
            raise ValueError("need 0 < lambda_start <= lambda_end")
        if not 0 < self.anneal_fraction <= 1:
            raise ValueError("anneal_fraction must lie in (0, 1]")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")


def lambda_schedule(step: int, cfg: ElboConfig) -> float:
    """Linear ramp over the anneal fraction of training, then constant."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    ramp = cfg.anneal_fraction * cfg.total_steps
    if step >= ramp:
        return cfg.lambda_end
    return cfg.lambda_start + (cfg.lambda_end - cfg.lambda_start) * (step / ramp)


def kl_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0, I)), summed over all entries."""
    return 0.5 * (mu * mu + logvar.exp() - 1.0 - logvar).sum()


def _elbo_terms(h_in, z_pc: Tensor, store: ParamStore, cfg: ModelConfig,
                lam: float, rng: Optional[np.random.Generator], noise=None
                ) -> Tuple[Tensor, Dict[str, float]]:
    mu, logvar = encode_grasp(h_in, z_pc, store, cfg)
    if noise is None:
        noise = rng.standard_normal(mu.shape)
    eps = np.asarray(noise, dtype=mu.dtype)
    z_h = mu + (0.5 * logvar).exp() * Tensor(eps)
    h_hat = decode_grasp(z_h, z_pc, store, cfg)
    diff = h_hat - Tensor(np.asarray(h_in, dtype=mu.dtype))
    recon = (diff * diff).sum(axis=-1)
    kl = 0.5 * (mu * mu + logvar.exp() - 1.0 - logvar).sum(axis=-1)
    loss = (recon + lam * kl).mean()
    metrics = {"recon": float(recon.data.mean()), "kl": float(kl.data.mean())}
    return loss, metrics


def elbo_loss(h_in, points, store: ParamStore, cfg: ModelConfig, lam: float,
              rng: Optional[np.random.Generator], noise=None
              ) -> Tuple[Tensor, Dict[str, float]]:
    """Reparameterized ELBO for one pair or a batch of pairs.

    Accepts (6,) with (N, 3) or (B, 6) with (B, N, 3); the loss is the batch
    mean of `recon + lam * kl`.  `noise` overrides the reparameterization
    draw (zeros give z = mu exactly).
    """
    z_pc = encode_pointcloud(points, store, cfg)
    return _elbo_terms(h_in, z_pc, store, cfg, lam, rng, noise)


@dataclass(frozen=True)
class VaeTrainConfig:
    total_steps: int = 3000
    batch_size: int = 64
    grasps_per_object: int = 1
    base_lr: float = 1e-3
    lambda_start: float = 1e-7
    lambda_end: float = 0.1
    anneal_fraction: float = 0.5
    jitter_sd: float = 0.01
    max_dropout: float = 0.4
    log_every: int = 25

    def elbo(self) -> ElboConfig:
        return ElboConfig(self.total_steps, self.lambda_start, self.lambda_end,
                          self.anneal_fraction)


def sample_batch(objects: Sequence[ObjectRecord], batch_size: int,
                 rng: np.random.Generator, jitter_sd: float, max_dropout: float,
                 grasps_per_object: int = 1):
    """Grasps from `batch_size` objects with one shared online augmentation
    per object, so each cloud encoding serves several pose samples.

    Returns (points (B, N, 3), h (B*G, 6), labels (B*G,), owner (B*G,))
    in float64; `owner` maps each grasp row to its cloud row.
    """
    if len(objects) <= batch_size:
        chosen = list(range(len(objects)))
    else:
        chosen = rng.choice(len(objects), size=batch_size, replace=False)
    pts, hs, labels, owner = [], [], [], []
    for row, idx in enumerate(chosen):
        obj = objects[int(idx)]
        picks = rng.integers(len(obj.grasps), size=grasps_per_object)
        grasps = [obj.grasps[int(i)] for i in picks]
        aug = augment(obj.points, [g.pose for g in grasps], rng,
                      jitter_sd=jitter_sd, max_dropout=max_dropout)
        pts.append(aug.points)
        hs.extend(pose_to_h(p) for p in aug.grasps)
        labels.extend(REGION_LABELS.index(g.label) for g in grasps)
        owner.extend([row] * grasps_per_object)
    return (np.stack(pts), np.stack(hs), np.array(labels, dtype=np.int64),
            np.array(owner, dtype=np.int64))


def train_vae(objects: Sequence[ObjectRecord], mcfg: ModelConfig,
              tcfg: VaeTrainConfig, seed: int, dtype=np.float32,
              resume_store: Optional[ParamStore] = None, start_step: int = 0
              ) -> Tuple[ParamStore, List[dict]]:
    """Two-network stage-1 fit; returns the parameter store and the metric
    rows (step, loss, recon, kl, lambda, lr).

    Resuming restores parameters and the per-step rng stream but starts
    Adam moments fresh (moments are not part of the checkpoint format).
    """
    if not objects:
        raise ValueError("cannot train on an empty dataset")
    for obj in objects:
        if not obj.grasps:
            raise ValueError(f"object {obj.object_id!r} has no grasp records")
    ss = np.random.SeedSequence(seed)
    init_seed, *step_seeds = ss.spawn(tcfg.total_steps + 1)
    if resume_store is not None:
        store = resume_store
    else:
        store = init_vae_params(mcfg, np.random.default_rng(init_seed), dtype=dtype)
    adam = AdamState(lr=tcfg.base_lr)
    elbo_cfg = tcfg.elbo()
    rows: List[dict] = []
    for step in range(start_step, tcfg.total_steps):
        rng = np.random.default_rng(step_seeds[step])
        pts, hs, _, owner = sample_batch(objects, tcfg.batch_size, rng,
                                         tcfg.jitter_sd, tcfg.max_dropout,
                                         tcfg.grasps_per_object)
        lam = lambda_schedule(step, elbo_cfg)
        lr = step_lr(step, tcfg.total_steps, tcfg.base_lr)
        z_pc = encode_pointcloud(pts.astype(dtype), store, mcfg)
        loss, metrics = _elbo_terms(hs.astype(dtype), z_pc[owner], store,
                                    mcfg, lam, rng)
        value = loss.item()
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite loss at step {step}")
        grads = gradients(loss, store)
        adam_step(store, grads, adam, lr=lr)
        if step % tcfg.log_every == 0 or step == tcfg.total_steps - 1:
            rows.append({"step": step, "loss": value, "recon": metrics["recon"],
                         "kl": metrics["kl"], "lambda": lam, "lr": lr})
    if rows:
        logger.info("stage-1 done: loss %.5f recon %.5f kl %.5f",
                    rows[-1]["loss"], rows[-1]["recon"], rows[-1]["kl"])
    return store, rows
