"""Command-line entry points: gen-data, train, sample, eval, bench.

Every command is deterministic given (config, seed); the GRASPLDM_SEED
environment variable overrides the config seed.  Outputs are written to
temp paths and atomically renamed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Optional

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from .config import RunConfig, config_from_dict, config_hash, load_config
from .diffusion import SamplerConfig, sample_latents, train_ldm
from .geometry import h_to_pose
from .models import decode_grasp, encode_pointcloud
from .numerics import load_checkpoint, save_checkpoint
from .vae import train_vae

logger = logging.getLogger(__name__)

SEED_ENV = "GRASPLDM_SEED"
STAGES = ("vae", "ldm", "task-ldm")


def _effective_seed(cfg: RunConfig) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        return int(env)
    return cfg.seed


def _write_text_atomic(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _write_json(path: str, obj):
    _write_text_atomic(path, json.dumps(obj, indent=1) + "\n")


def _write_csv(path: str, rows, fieldnames):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    os.replace(tmp, path)


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    seed = _effective_seed(cfg)
    d = cfg.dataset
    objects = ds.generate_dataset(d.n_objects, d.grasps_per_object, d.n_points,
                                  d.kinds, d.gripper, seed,
                                  balance_labels=d.balance_labels)
    ds.write_dataset(objects, args.out)
    total = sum(len(o.grasps) for o in objects)
    print(f"wrote {len(objects)} objects / {total} grasp records -> {args.out}")
    return 0


def _load_stage1(path: str):
    stores, manifest = load_checkpoint(path)
    if "vae" not in stores:
        raise ValueError(f"{path} is not a stage-1 checkpoint (no vae store)")
    return stores["vae"], manifest


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = _effective_seed(cfg)
    objects = ds.load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    chash = config_hash(cfg)
    meta = {"stage": args.stage, "task_enabled": args.stage == "task-ldm",
            "config": cfg.to_dict()}
    resume_store, start_step = None, 0
    if args.resume and os.path.exists(os.path.join(args.out, "manifest.json")):
        stores, manifest = load_checkpoint(args.out, requires_grad=True)
        if manifest["extra"].get("stage") != args.stage:
            raise ValueError("cannot resume: checkpoint stage differs")
        key = "vae" if args.stage == "vae" else "score"
        resume_store = stores[key]
        start_step = manifest["global_step"]
        logger.info("resuming %s from step %d", args.stage, start_step)

    if args.stage == "vae":
        store, rows = train_vae(objects, cfg.model, cfg.vae, seed,
                                resume_store=resume_store, start_step=start_step)
        save_checkpoint(args.out, {"vae": store}, config_hash=chash, extra=meta)
    else:
        if not args.stage1:
            raise ValueError(f"--stage {args.stage} requires --stage1 <dir>")
        vae_store, _ = _load_stage1(args.stage1)
        sched = cfg.build_schedule()
        store, rows = train_ldm(vae_store, objects, cfg.model, cfg.diffusion,
                                sched, seed, task_enabled=args.stage == "task-ldm",
                                resume_store=resume_store, start_step=start_step)
        save_checkpoint(args.out, {"vae": vae_store, "score": store},
                        config_hash=chash, extra=meta)
    if rows:
        _write_csv(os.path.join(args.out, "metrics.csv"), rows, list(rows[0].keys()))
        print(f"trained stage={args.stage} steps={rows[-1]['step'] + 1} "
              f"final loss={rows[-1]['loss']:.6f} -> {args.out}")
    else:
        print(f"stage={args.stage} already at total steps; checkpoint refreshed")
    return 0


def _load_model(path: str):
    """Returns (cfg, vae_store, score_store or None, task_enabled)."""
    stores, manifest = load_checkpoint(path)
    cfg = config_from_dict(manifest["extra"]["config"])
    task_enabled = bool(manifest["extra"].get("task_enabled"))
    return cfg, stores["vae"], stores.get("score"), task_enabled


def _pick_object(objects, object_id: Optional[str]):
    if object_id is None:
        return objects[0]
    for obj in objects:
        if obj.object_id == object_id:
            return obj
    raise ValueError(f"object {object_id!r} not in dataset")


def _sampler_from_args(cfg: RunConfig, args) -> SamplerConfig:
    kind = args.sampler or cfg.sampler.kind
    steps = args.steps or cfg.sampler.steps
    return SamplerConfig(kind=kind, steps=steps, eta=cfg.sampler.eta,
                         paper_literal_eq5=cfg.sampler.paper_literal_eq5)


def cmd_sample(args) -> int:
    cfg, vae_store, score_store, task_enabled = _load_model(args.checkpoint)
    seed = _effective_seed(cfg)
    objects = ds.load_dataset(args.data)
    obj = _pick_object(objects, args.object)
    task = None
    if args.task is not None:
        if not task_enabled:
            raise ValueError("--task given but the checkpoint is not task-conditional")
        task = ds.REGION_LABELS.index(args.task)
    elif task_enabled:
        raise ValueError("task-conditional checkpoint requires --task")

    rng = np.random.default_rng(seed)
    aug = ds.augment(obj.points, [], rng, jitter_sd=cfg.eval.jitter_sd,
                     max_dropout=cfg.eval.max_dropout)
    back = aug.frame.inverse()
    sampler = _sampler_from_args(cfg, args)
    sched = cfg.build_schedule()
    doc = {"object": obj.object_id, "sampler": sampler.kind}

    dtype = next(iter(vae_store.items()))[1].dtype
    z_pc = encode_pointcloud(aug.points.astype(dtype), vae_store, cfg.model).data

    def decode_to_pose7(latents):
        h = decode_grasp(latents.astype(dtype), z_pc, vae_store, cfg.model).data
        poses = [back.compose(h_to_pose(row.astype(np.float64))) for row in h]
        return [[float(v) for v in p.as_array7()] for p in poses]

    if score_store is None:
        z = rng.standard_normal((args.n, cfg.model.z_h_dim))
        traj = {}
    else:
        record_at = None
        if args.dump_trajectory:
            record_at = sorted({int(t) for t in
                                np.linspace(0, cfg.model.timesteps, 11).round()})
        z, traj = sample_latents(score_store, cfg.model, z_pc, sampler, sched,
                                 rng, args.n, task=task, record_at=record_at)
    doc["poses"] = decode_to_pose7(z)
    if args.dump_trajectory:
        doc["trajectory"] = [{"t": int(t), "poses": decode_to_pose7(zt)}
                             for t, zt in sorted(traj.items(), reverse=True)]
    _write_json(args.out, doc)
    print(f"sampled {args.n} poses for {obj.object_id} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg, vae_store, score_store, task_enabled = _load_model(args.checkpoint)
    seed = _effective_seed(cfg)
    objects = ds.load_dataset(args.data)
    sampler = _sampler_from_args(cfg, args)
    sched = cfg.build_schedule()
    n_grasps = args.n or cfg.eval.n_grasps
    report = ev.success_rate(objects, vae_store, cfg.model, cfg.dataset.gripper,
                             n_grasps, seed, score_store=score_store, sched=sched,
                             sampler=sampler, jitter_sd=cfg.eval.jitter_sd,
                             max_dropout=cfg.eval.max_dropout, jobs=args.jobs)
    if args.emd:
        emd_cfg = ev.EmdConfig(samples=cfg.eval.emd_samples,
                               iterations=cfg.eval.emd_iterations)
        children = np.random.SeedSequence(seed + 1).spawn(len(objects))
        for row, obj, child in zip(report["per_object"], objects, children):
            rng = np.random.default_rng(child)
            generated = ev.sample_pose_set(obj, vae_store, cfg.model,
                                           cfg.eval.emd_samples, rng,
                                           score_store=score_store, sched=sched,
                                           sampler=sampler,
                                           jitter_sd=cfg.eval.jitter_sd,
                                           max_dropout=cfg.eval.max_dropout)
            truth = np.stack([g.pose.as_array7() for g in obj.grasps])
            row["emd"] = ev.se3_emd(generated, truth, emd_cfg, rng)
    raw = report.pop("raw")
    _write_json(args.out + ".json", report)
    _write_csv(args.out + ".csv",
               [{"object_id": o, "grasp": i, "success": int(s), "reason": r}
                for o, i, s, r in raw],
               ["object_id", "grasp", "success", "reason"])
    print(f"eval: median={report['median']:.3f} iqr={report['iqr']:.3f} "
          f"over {len(objects)} objects -> {args.out}.json")
    return 0


def cmd_bench(args) -> int:
    cfg, vae_store, score_store, task_enabled = _load_model(args.checkpoint)
    if score_store is None:
        raise ValueError("bench needs a stage-2 checkpoint")
    if task_enabled:
        raise ValueError("bench expects an unconditional checkpoint")
    seed = _effective_seed(cfg)
    objects = ds.load_dataset(args.data)
    obj = _pick_object(objects, args.object)
    sched = cfg.build_schedule()
    rows = ev.sampler_benchmark(obj, vae_store, score_store, cfg.model, sched,
                                cfg.dataset.gripper, args.batch, args.repeats,
                                seed, ddim_steps=cfg.sampler.steps,
                                jitter_sd=cfg.eval.jitter_sd,
                                max_dropout=cfg.eval.max_dropout)
    _write_csv(args.out, rows, list(rows[0].keys()))
    for row in rows:
        print(f"{row['sampler']:>5} steps={row['steps']:>4} batch={row['batch']:>5} "
              f"{row['mean_s']:.3f}s +- {row['sd_s']:.3f}s "
              f"success={row['success_rate']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graspdiff",
        description="latent-diffusion grasp generation: data, training, "
                    "sampling, evaluation, benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a procedural grasp dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--stage", required=True, choices=STAGES)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage1", help="stage-1 checkpoint dir (ldm / task-ldm)")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample grasp poses for one object")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--object")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--sampler", choices=("ddpm", "ddim"))
    p.add_argument("--steps", type=int)
    p.add_argument("--task", choices=ds.REGION_LABELS)
    p.add_argument("--dump-trajectory", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="success-rate (and EMD) evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output prefix (.json/.csv)")
    p.add_argument("--n", type=int)
    p.add_argument("--emd", action="store_true")
    p.add_argument("--sampler", choices=("ddpm", "ddim"))
    p.add_argument("--steps", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="sampler wall-clock benchmark")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--object")
    p.add_argument("--batch", type=int, nargs="+", default=[100])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
