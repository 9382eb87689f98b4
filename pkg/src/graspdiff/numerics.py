"""Parameter storage, Adam, schedules, and the checkpoint format.

Checkpoints are a JSON manifest (names, shapes, dtype, byte offsets, global
step, config hash) next to a single little-endian raw float blob; loading
validates every shape against the manifest.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, Tuple

import numpy as np

from .autodiff import Tensor

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"


class ParamStore:
    """Ordered, named parameter tensors plus a global step counter."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self.step = 0

    def add(self, name: str, array: np.ndarray, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array, copy=True), requires_grad=requires_grad)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._params.items())

    def set_requires_grad(self, flag: bool):
        for t in self._params.values():
            t.requires_grad = flag
            t.grad = None

    def copy(self) -> "ParamStore":
        out = ParamStore()
        out.step = self.step
        for name, t in self._params.items():
            out.add(name, t.data, requires_grad=t.requires_grad)
        return out

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}


def gradients(loss: Tensor, store: ParamStore) -> Dict[str, np.ndarray]:
    """Gradient of a scalar loss for every parameter in the store.

    Parameters that do not participate in the recorded computation get an
    all-zero gradient of the matching shape.
    """
    for _, p in store.items():
        p.grad = None
    loss.backward()
    out = {}
    for name, p in store.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie strictly inside (0, 1)")


def adam_step(store: ParamStore, grads: Dict[str, np.ndarray], state: AdamState,
              lr: float | None = None):
    """One bias-corrected Adam update in place; increments the step counter."""
    if lr is None:
        lr = state.lr
    store.step += 1
    t = store.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in store.items():
        if not p.requires_grad:
            continue
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


def step_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Decay by 0.1 at each completed third of training."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    segment = min(3 * step // total_steps, 2)
    return base_lr * 0.1 ** segment


def sinusoidal_embedding(t, dim: int, dtype=np.float64) -> np.ndarray:
    """Sin/cos embedding of timestep(s) at geometric frequencies.

    Layout is [sin(t*f_0) .. sin(t*f_{d/2-1}), cos(t*f_0) .. cos(t*f_{d/2-1})]
    with f_i = 10000^(-2i/dim); every entry lies in [-1, 1].
    """
    if dim % 2 != 0:
        raise ValueError("embedding dimension must be even")
    t = np.asarray(t, dtype=dtype)
    if np.any(t < 0):
        raise ValueError("timestep must be non-negative")
    half = dim // 2
    freqs = np.power(10000.0, -2.0 * np.arange(half, dtype=dtype) / dim)
    args = t[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1).astype(dtype)


# -- checkpoint io ---------------------------------------------------------


def save_checkpoint(path: str, stores: Dict[str, ParamStore], config_hash: str = "",
                    extra: dict | None = None):
    """Write manifest + blob for one or more named stores under `path`/."""
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    dtype = None
    global_step = max((s.step for s in stores.values()), default=0)
    for store_name, store in stores.items():
        for name, p in store.items():
            arr = p.data
            if dtype is None:
                dtype = arr.dtype
            elif arr.dtype != dtype:
                raise ValueError("all parameters in a checkpoint must share one dtype")
            raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
            entries.append({
                "name": f"{store_name}/{name}",
                "shape": list(arr.shape),
                "offset": offset,
            })
            offset += len(raw)
            chunks.append(raw)
    manifest = {
        "dtype": np.dtype(dtype).name if dtype is not None else "float32",
        "global_step": global_step,
        "config_hash": config_hash,
        "params": entries,
        "extra": extra or {},
    }
    blob_tmp = os.path.join(path, BLOB_NAME + ".tmp")
    with open(blob_tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(blob_tmp, os.path.join(path, BLOB_NAME))
    man_tmp = os.path.join(path, MANIFEST_NAME + ".tmp")
    with open(man_tmp, "w") as f:
        json.dump(manifest, f, indent=1)
    os.replace(man_tmp, os.path.join(path, MANIFEST_NAME))


def load_checkpoint(path: str, requires_grad: bool = False):
    """Load stores from `path`/; returns (stores dict, manifest dict)."""
    with open(os.path.join(path, MANIFEST_NAME)) as f:
        manifest = json.load(f)
    dtype = np.dtype(manifest["dtype"]).newbyteorder("<")
    with open(os.path.join(path, BLOB_NAME), "rb") as f:
        blob = f.read()
    stores: Dict[str, ParamStore] = {}
    for entry in manifest["params"]:
        store_name, _, param_name = entry["name"].partition("/")
        shape = tuple(entry["shape"])
        count = math.prod(shape)
        start = entry["offset"]
        end = start + count * dtype.itemsize
        if end > len(blob):
            raise ValueError(f"blob too short for parameter {entry['name']!r}")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
        arr = arr.reshape(shape).astype(dtype.newbyteorder("="))
        if arr.shape != shape:
            raise ValueError(f"shape mismatch for {entry['name']!r}")
        store = stores.setdefault(store_name, ParamStore())
        store.add(param_name, arr, requires_grad=requires_grad)
    for store in stores.values():
        store.step = manifest["global_step"]
    return stores, manifest
