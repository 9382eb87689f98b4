"""Evaluation suite: grasp generation + success rates, pose-set Earth
Mover's Distance on SE(3), and task-label precision.

The test protocol mirrors training: clouds are rotation/jitter/dropout
augmented before encoding, generated poses are mapped back through the
inverse augmentation frame, and the geometric oracle judges them against
the object's canonical-frame SDF.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .assignment import hungarian
from .dataset import REGION_LABELS, ObjectRecord, assign_region_label, augment
from .diffusion import DiffusionSchedule, SamplerConfig, sample_latents
from .geometry import RigidTransform, h_to_pose
from .gripper import GripperSpec
from .models import ModelConfig, decode_grasp, encode_pointcloud
from .numerics import ParamStore
from .oracle import OracleResult, success_oracle


@dataclass(frozen=True)
class EmdConfig:
    samples: int = 100
    iterations: int = 500
    resample: bool = True

    def __post_init__(self):
        if self.samples <= 0 or self.iterations <= 0:
            raise ValueError("samples and iterations must be positive")


def _pose_array(poses) -> np.ndarray:
    if isinstance(poses, np.ndarray):
        arr = np.asarray(poses, dtype=np.float64)
    else:
        arr = np.stack([p.as_array7() for p in poses])
    if arr.ndim != 2 or arr.shape[1] != 7:
        raise ValueError("pose set must be (n, 7) [q_w,q_x,q_y,q_z,t_x,t_y,t_z]")
    if arr.shape[0] == 0:
        raise ValueError("pose set is empty")
    return arr


def pose_set_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise translation distance plus double-cover-safe rotation
    distance 1 - |q_a . q_b|."""
    ta, tb = a[:, 4:], b[:, 4:]
    qa, qb = a[:, :4], b[:, :4]
    d_t = np.linalg.norm(ta[:, None, :] - tb[None, :, :], axis=-1)
    d_r = np.maximum(1.0 - np.abs(qa @ qb.T), 0.0)  # |dot| may exceed 1 by eps
    return d_t + d_r


def se3_emd(set_a, set_b, cfg: EmdConfig = EmdConfig(),
            rng: Optional[np.random.Generator] = None) -> float:
    """Mean optimally-assigned pose distance between two sets.

    With resampling, each iteration draws `samples` poses per set with
    replacement; with resample=False the full (equal-size) sets are matched
    once, which makes the metric symmetric and exactly zero on identical
    sets.
    """
    a = _pose_array(set_a)
    b = _pose_array(set_b)
    if not cfg.resample:
        if a.shape[0] != b.shape[0]:
            raise ValueError("resample=False needs equal-size sets")
        cost = pose_set_cost(a, b)
        perm = hungarian(cost)
        return float(cost[np.arange(len(a)), perm].mean())
    if rng is None:
        raise ValueError("resampling EMD needs an rng")
    totals = []
    for _ in range(cfg.iterations):
        ia = rng.integers(0, a.shape[0], size=cfg.samples)
        ib = rng.integers(0, b.shape[0], size=cfg.samples)
        cost = pose_set_cost(a[ia], b[ib])
        perm = hungarian(cost)
        totals.append(cost[np.arange(cfg.samples), perm].mean())
    return float(np.mean(totals))


def generate_poses(vae_store: ParamStore, mcfg: ModelConfig, points_aug: np.ndarray,
                   n: int, rng: np.random.Generator,
                   score_store: Optional[ParamStore] = None,
                   sched: Optional[DiffusionSchedule] = None,
                   sampler: Optional[SamplerConfig] = None,
                   task=None) -> List[RigidTransform]:
    """Decode n grasp poses for one augmented cloud.

    Latents come from the unit-normal prior when no noise predictor is
    given, otherwise from reverse diffusion conditioned on the shape code.
    """
    dtype = next(iter(vae_store.items()))[1].dtype
    z_pc = encode_pointcloud(points_aug.astype(dtype), vae_store, mcfg).data
    if score_store is None:
        z = rng.standard_normal((n, mcfg.z_h_dim))
    else:
        if sched is None or sampler is None:
            raise ValueError("reverse diffusion needs a schedule and sampler config")
        z, _ = sample_latents(score_store, mcfg, z_pc, sampler, sched, rng, n,
                              task=task)
    h = decode_grasp(z.astype(dtype), z_pc, vae_store, mcfg).data
    return [h_to_pose(row.astype(np.float64)) for row in h]


def evaluate_object(obj: ObjectRecord, vae_store: ParamStore, mcfg: ModelConfig,
                    gripper: GripperSpec, n_grasps: int, seed,
                    score_store: Optional[ParamStore] = None,
                    sched: Optional[DiffusionSchedule] = None,
                    sampler: Optional[SamplerConfig] = None,
                    task=None, jitter_sd: float = 0.01,
                    max_dropout: float = 0.4) -> List[OracleResult]:
    """Augment, generate, un-normalize, and run the oracle for one object."""
    rng = np.random.default_rng(seed)
    aug = augment(obj.points, [], rng, jitter_sd=jitter_sd, max_dropout=max_dropout)
    poses = generate_poses(vae_store, mcfg, aug.points, n_grasps, rng,
                           score_store=score_store, sched=sched, sampler=sampler,
                           task=task)
    back = aug.frame.inverse()
    primitive = obj.primitive()
    return [success_oracle(primitive, back.compose(p), gripper) for p in poses]


def success_rate(objects: Sequence[ObjectRecord], vae_store: ParamStore,
                 mcfg: ModelConfig, gripper: GripperSpec, n_grasps: int,
                 seed: int, score_store: Optional[ParamStore] = None,
                 sched: Optional[DiffusionSchedule] = None,
                 sampler: Optional[SamplerConfig] = None,
                 jitter_sd: float = 0.01, max_dropout: float = 0.4,
                 jobs: int = 1) -> dict:
    """Per-object success rates plus median / interquartile summary.

    Returns {"per_object": [{object_id, success_rate}...], "median", "iqr",
    "raw": [(object_id, index, success, reason)...]}.  Per-object rng streams
    are split up front, so jobs > 1 (a process pool over objects) returns
    byte-identical results to a sequential run.
    """
    children = np.random.SeedSequence(seed).spawn(len(objects))
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(evaluate_object, obj, vae_store, mcfg, gripper,
                                   n_grasps, child, score_store, sched, sampler,
                                   None, jitter_sd, max_dropout)
                       for obj, child in zip(objects, children)]
            all_results = [f.result() for f in futures]
    else:
        all_results = [evaluate_object(obj, vae_store, mcfg, gripper, n_grasps,
                                       child, score_store=score_store, sched=sched,
                                       sampler=sampler, jitter_sd=jitter_sd,
                                       max_dropout=max_dropout)
                       for obj, child in zip(objects, children)]
    per_object = []
    raw = []
    for obj, results in zip(objects, all_results):
        rate = float(np.mean([r.success for r in results]))
        per_object.append({"object_id": obj.object_id, "success_rate": rate})
        raw.extend((obj.object_id, i, r.success, r.failure_reason or "")
                   for i, r in enumerate(results))
    rates = np.array([row["success_rate"] for row in per_object])
    return {
        "per_object": per_object,
        "median": float(np.median(rates)),
        "iqr": float(np.percentile(rates, 75) - np.percentile(rates, 25)),
        "raw": raw,
    }


def sample_pose_set(obj: ObjectRecord, vae_store: ParamStore, mcfg: ModelConfig,
                    n: int, rng: np.random.Generator,
                    score_store: Optional[ParamStore] = None,
                    sched: Optional[DiffusionSchedule] = None,
                    sampler: Optional[SamplerConfig] = None,
                    jitter_sd: float = 0.01, max_dropout: float = 0.4) -> np.ndarray:
    """Generated poses mapped back to the object's canonical frame, as an
    (n, 7) array, for set-distance comparison against ground truth."""
    aug = augment(obj.points, [], rng, jitter_sd=jitter_sd, max_dropout=max_dropout)
    poses = generate_poses(vae_store, mcfg, aug.points, n, rng,
                           score_store=score_store, sched=sched, sampler=sampler)
    back = aug.frame.inverse()
    return np.stack([back.compose(p).as_array7() for p in poses])


def sampler_benchmark(obj: ObjectRecord, vae_store: ParamStore,
                      score_store: ParamStore, mcfg: ModelConfig,
                      sched: DiffusionSchedule, gripper: GripperSpec,
                      batch_sizes: Sequence[int], repeats: int, seed: int,
                      ddim_steps: int = 100, jitter_sd: float = 0.01,
                      max_dropout: float = 0.4) -> List[dict]:
    """Wall-clock mean/sd of the latent sampling loop per (sampler, batch),
    plus the oracle success rate over every generated grasp."""
    import time

    dtype = next(iter(vae_store.items()))[1].dtype
    primitive = obj.primitive()
    variants = [("ddpm", sched.T, SamplerConfig(kind="ddpm")),
                ("ddim", ddim_steps, SamplerConfig(kind="ddim", steps=ddim_steps)),
                ("vae", 0, None)]
    rows = []
    for variant_idx, (name, steps, sampler) in enumerate(variants):
        for batch in batch_sizes:
            rng = np.random.default_rng(np.random.SeedSequence((seed, variant_idx, batch)))
            aug = augment(obj.points, [], rng, jitter_sd=jitter_sd,
                          max_dropout=max_dropout)
            z_pc = encode_pointcloud(aug.points.astype(dtype), vae_store, mcfg).data
            times, successes, total = [], 0, 0
            back = aug.frame.inverse()
            for _ in range(repeats):
                t0 = time.perf_counter()
                if sampler is None:
                    z = rng.standard_normal((batch, mcfg.z_h_dim))
                else:
                    z, _ = sample_latents(score_store, mcfg, z_pc, sampler, sched,
                                          rng, batch)
                times.append(time.perf_counter() - t0)
                h = decode_grasp(z.astype(dtype), z_pc, vae_store, mcfg).data
                for row in h:
                    pose = back.compose(h_to_pose(row.astype(np.float64)))
                    successes += success_oracle(primitive, pose, gripper).success
                    total += 1
            rows.append({
                "sampler": name, "steps": steps, "batch": batch,
                "mean_s": float(np.mean(times)),
                "sd_s": float(np.std(times, ddof=1)) if repeats > 1 else 0.0,
                "success_rate": successes / total,
            })
    return rows


def label_precision(objects: Sequence[ObjectRecord], vae_store: ParamStore,
                    score_store: ParamStore, mcfg: ModelConfig,
                    sched: DiffusionSchedule, sampler: SamplerConfig,
                    gripper: GripperSpec, n_per_label: int, seed: int,
                    labels: Sequence[str] = REGION_LABELS) -> dict:
    """Fraction of generated grasps whose region label (checked on the
    unrotated cloud after reversing the augmentation rotation) matches the
    conditioning label; clouds are rotation-augmented as at test time."""
    children = np.random.SeedSequence(seed).spawn(len(objects))
    per_object = []
    for obj, child in zip(objects, children):
        rng = np.random.default_rng(child)
        aug = augment(obj.points, [], rng, jitter_sd=0.0, max_dropout=0.0)
        back = aug.frame.inverse()
        matches, total = 0, 0
        for label in labels:
            task = REGION_LABELS.index(label)
            poses = generate_poses(vae_store, mcfg, aug.points, n_per_label, rng,
                                   score_store=score_store, sched=sched,
                                   sampler=sampler, task=task)
            for pose in poses:
                predicted = assign_region_label(back.compose(pose), obj.points,
                                                gripper)
                matches += predicted == label
                total += 1
        per_object.append({"object_id": obj.object_id,
                           "precision": matches / total})
    mean_precision = float(np.mean([row["precision"] for row in per_object]))
    return {"per_object": per_object, "mean_precision": mean_precision}
