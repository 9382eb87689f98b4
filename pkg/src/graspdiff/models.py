"""The learned networks: point-cloud set encoder, grasp posterior encoder,
grasp decoder, and the noise-prediction network for latent denoising.

The point-cloud encoder is a shared pointwise map with feature-wise max
pooling, so permutation invariance is exact.  Grasp encoder/decoder and the
noise predictor are residual stacks whose features are scaled and shifted
per block (FiLM) by their conditioning vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .autodiff import Tensor
from .numerics import ParamStore, sinusoidal_embedding


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 1024
    pc_widths: Tuple[int, ...] = (64, 128, 256)
    z_pc_dim: int = 128
    z_h_dim: int = 4
    block_width: int = 256
    n_blocks: int = 3
    cond_dim: int = 128
    timesteps: int = 1000
    task_classes: int = 0  # 0 disables the class-embedding branch
    logvar_clip: float = 10.0

    def __post_init__(self):
        if self.cond_dim % 2 != 0:
            raise ValueError("cond_dim must be even (sin/cos halves)")
        for name in ("n_points", "z_pc_dim", "z_h_dim", "block_width", "n_blocks", "timesteps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _init_linear(store: ParamStore, rng, name: str, fan_in: int, fan_out: int, dtype):
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
    store.add(f"{name}.w", w.astype(dtype))
    store.add(f"{name}.b", np.zeros(fan_out, dtype=dtype))


def _init_film_block(store, rng, prefix, width, cond_dim, dtype):
    _init_linear(store, rng, f"{prefix}.l1", width, width, dtype)
    _init_linear(store, rng, f"{prefix}.scale", cond_dim, width, dtype)
    _init_linear(store, rng, f"{prefix}.shift", cond_dim, width, dtype)
    _init_linear(store, rng, f"{prefix}.l2", width, width, dtype)


def _linear(x: Tensor, store: ParamStore, name: str) -> Tensor:
    return x @ store[f"{name}.w"] + store[f"{name}.b"]


def _film_block(x: Tensor, cond: Tensor, store: ParamStore, prefix: str) -> Tensor:
    h = _linear(x, store, f"{prefix}.l1").silu()
    scale = 1.0 + _linear(cond, store, f"{prefix}.scale")
    shift = _linear(cond, store, f"{prefix}.shift")
    h = scale * h + shift
    return x + _linear(h, store, f"{prefix}.l2")


def init_vae_params(cfg: ModelConfig, rng, dtype=np.float32) -> ParamStore:
    store = ParamStore()
    widths = (3,) + tuple(cfg.pc_widths)
    for i in range(len(cfg.pc_widths)):
        _init_linear(store, rng, f"pc.{i}", widths[i], widths[i + 1], dtype)
    _init_linear(store, rng, "pc.out", cfg.pc_widths[-1], cfg.z_pc_dim, dtype)
    w = cfg.block_width
    _init_linear(store, rng, "enc.in", 6, w, dtype)
    for i in range(cfg.n_blocks):
        _init_film_block(store, rng, f"enc.b{i}", w, cfg.z_pc_dim, dtype)
    _init_linear(store, rng, "enc.mu", w, cfg.z_h_dim, dtype)
    _init_linear(store, rng, "enc.logvar", w, cfg.z_h_dim, dtype)
    _init_linear(store, rng, "dec.in", cfg.z_h_dim, w, dtype)
    for i in range(cfg.n_blocks):
        _init_film_block(store, rng, f"dec.b{i}", w, cfg.z_pc_dim, dtype)
    _init_linear(store, rng, "dec.out", w, 6, dtype)
    return store


def init_score_params(cfg: ModelConfig, rng, dtype=np.float32,
                      task_classes: Optional[int] = None) -> ParamStore:
    tc = cfg.task_classes if task_classes is None else task_classes
    store = ParamStore()
    w = cfg.block_width
    _init_linear(store, rng, "cond.pc", cfg.z_pc_dim, cfg.cond_dim, dtype)
    _init_linear(store, rng, "in", cfg.z_h_dim, w, dtype)
    for i in range(cfg.n_blocks):
        _init_film_block(store, rng, f"b{i}", w, cfg.cond_dim, dtype)
    _init_linear(store, rng, "out", w, cfg.z_h_dim, dtype)
    if tc > 0:
        emb = rng.normal(0.0, 1.0 / np.sqrt(cfg.cond_dim), size=(tc, cfg.cond_dim))
        store.add("task_emb", emb.astype(dtype))
    return store


def _param_dtype(store: ParamStore):
    return next(iter(store.items()))[1].dtype


def encode_pointcloud(points, store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Cloud (N, 3) or (B, N, 3) -> shape code (m,) or (B, m); exactly
    permutation-invariant over the point axis."""
    dtype = _param_dtype(store)
    x = _as_tensor(points, dtype)
    if x.shape[-1] != 3 or x.shape[-2] != cfg.n_points:
        raise ValueError(f"expected {cfg.n_points} points of dim 3, got shape {x.shape}")
    for i in range(len(cfg.pc_widths)):
        x = _linear(x, store, f"pc.{i}").relu()
    x = x.max(axis=-2)
    return _linear(x, store, "pc.out")


def encode_grasp(h, z_pc, store: ParamStore, cfg: ModelConfig) -> Tuple[Tensor, Tensor]:
    """Grasp 6-vector(s) + shape code -> posterior (mean, log-variance)."""
    dtype = _param_dtype(store)
    x = _linear(_as_tensor(h, dtype), store, "enc.in")
    cond = _as_tensor(z_pc, dtype)
    for i in range(cfg.n_blocks):
        x = _film_block(x, cond, store, f"enc.b{i}")
    x = x.silu()
    mu = _linear(x, store, "enc.mu")
    logvar = _linear(x, store, "enc.logvar").clip(-cfg.logvar_clip, cfg.logvar_clip)
    return mu, logvar


def decode_grasp(z_h, z_pc, store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Latent grasp code(s) + shape code -> unconstrained 6-vector [t, a]."""
    dtype = _param_dtype(store)
    x = _linear(_as_tensor(z_h, dtype), store, "dec.in")
    cond = _as_tensor(z_pc, dtype)
    for i in range(cfg.n_blocks):
        x = _film_block(x, cond, store, f"dec.b{i}")
    x = x.silu()
    return _linear(x, store, "dec.out")


def score_network(z_t, t, z_pc, store: ParamStore, cfg: ModelConfig,
                  task=None) -> Tensor:
    """Noise prediction for latent(s) at timestep(s) t.

    The conditioning vector is the sinusoidal time embedding plus a learned
    projection of the shape code (plus a class embedding when the task
    branch exists); it modulates the features at every block.
    """
    dtype = _param_dtype(store)
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > cfg.timesteps):
        raise ValueError(f"timestep out of range [1, {cfg.timesteps}]")
    temb = sinusoidal_embedding(t_arr, cfg.cond_dim, dtype=dtype)
    cond = Tensor(temb) + _linear(_as_tensor(z_pc, dtype), store, "cond.pc")
    if task is not None:
        if "task_emb" not in store:
            raise ValueError("task conditioning requested but the network has no task branch")
        n_classes = store["task_emb"].shape[0]
        task_arr = np.asarray(task)
        if np.any(task_arr < 0) or np.any(task_arr >= n_classes):
            raise ValueError(f"task id out of vocabulary [0, {n_classes})")
        onehot = np.zeros(task_arr.shape + (n_classes,), dtype=dtype)
        np.put_along_axis(onehot, task_arr[..., None], 1.0, axis=-1)
        cond = cond + Tensor(onehot) @ store["task_emb"]
    elif "task_emb" in store:
        raise ValueError("this network is task-conditional; a task id is required")
    x = _linear(_as_tensor(z_t, dtype), store, "in")
    for i in range(cfg.n_blocks):
        x = _film_block(x, cond, store, f"b{i}")
    x = x.silu()
    return _linear(x, store, "out")
