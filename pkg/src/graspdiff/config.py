"""Run configuration: one JSON document with strict per-section schemas.

Unknown keys are rejected everywhere; the canonical-JSON hash of the full
document is stamped into checkpoints so evaluation can verify provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Tuple

from .diffusion import LdmTrainConfig, SamplerConfig
from .gripper import GripperSpec
from .models import ModelConfig
from .vae import VaeTrainConfig


@dataclass(frozen=True)
class DatasetConfig:
    n_objects: int = 8
    grasps_per_object: int = 128
    n_points: int = 1024
    kinds: Tuple[str, ...] = ("box", "cylinder", "sphere", "mug")
    balance_labels: bool = False
    gripper: GripperSpec = GripperSpec()

    def __post_init__(self):
        if self.n_objects <= 0 or self.grasps_per_object <= 0 or self.n_points <= 0:
            raise ValueError("dataset sizes must be positive")
        if not self.kinds:
            raise ValueError("dataset needs at least one primitive kind")


@dataclass(frozen=True)
class ScheduleConfig:
    beta_start: float = 5e-5
    beta_end: float = 1e-3
    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")


@dataclass(frozen=True)
class EvalConfig:
    n_grasps: int = 100
    n_per_label: int = 50
    jitter_sd: float = 0.01
    max_dropout: float = 0.4
    emd_samples: int = 100
    emd_iterations: int = 500


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    vae: VaeTrainConfig = VaeTrainConfig()
    diffusion: LdmTrainConfig = LdmTrainConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    sampler: SamplerConfig = SamplerConfig()
    eval: EvalConfig = EvalConfig()
    seed: int = 0

    def __post_init__(self):
        if self.sampler.kind == "ddim" and self.sampler.steps > self.model.timesteps:
            raise ValueError("ddim steps cannot exceed the diffusion horizon T")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def build_schedule(self):
        from .diffusion import DiffusionSchedule
        if self.schedule.kind == "cosine":
            return DiffusionSchedule.cosine(self.model.timesteps)
        return DiffusionSchedule.linear(self.model.timesteps,
                                        self.schedule.beta_start,
                                        self.schedule.beta_end)


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "vae": VaeTrainConfig,
    "diffusion": LdmTrainConfig,
    "schedule": ScheduleConfig,
    "sampler": SamplerConfig,
    "eval": EvalConfig,
}

_TUPLE_FIELDS = {("dataset", "kinds"), ("model", "pc_widths")}


def _build_section(name: str, cls, data: dict):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ValueError(f"unknown key(s) in section {name!r}: {sorted(unknown)}")
    kwargs = dict(data)
    for key, val in kwargs.items():
        if (name, key) in _TUPLE_FIELDS:
            kwargs[key] = tuple(val)
    if name == "dataset" and "gripper" in kwargs:
        grip = kwargs["gripper"]
        if not isinstance(grip, GripperSpec):
            gf = {f.name for f in dataclasses.fields(GripperSpec)}
            bad = set(grip) - gf
            if bad:
                raise ValueError(f"unknown gripper key(s): {sorted(bad)}")
            kwargs["gripper"] = GripperSpec(**grip)
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    unknown = set(doc) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ValueError(f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in doc:
            section = doc[name]
            if not isinstance(section, dict):
                raise ValueError(f"config section {name!r} must be an object")
            kwargs[name] = _build_section(name, cls, section)
    if "seed" in doc:
        if not isinstance(doc["seed"], int):
            raise ValueError("seed must be an integer")
        kwargs["seed"] = doc["seed"]
    return RunConfig(**kwargs)


def load_config(path: str) -> RunConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
