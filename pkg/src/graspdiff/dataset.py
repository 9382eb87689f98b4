"""Procedural grasp dataset: antipodal annotation, region labels,
augmentations, and JSON-lines persistence.

Object records live in the primitive's canonical (area-centered) frame, so
the analytic SDF stays aligned with the stored cloud and grasps; exact
centroid framing of model inputs happens online in `augment`.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (RigidTransform, quat_from_matrix, quat_mul, quat_rotate,
                       random_rotation)
from .gripper import GripperSpec, root_position
from .oracle import success_oracle
from .shapes import Primitive, PrimitiveShape, make_primitive, ray_surface_exit

logger = logging.getLogger(__name__)

REGION_LABELS = ("top", "body", "bottom")


@dataclass
class GraspRecord:
    object_id: str
    pose: RigidTransform
    label: str
    success: bool

    def __post_init__(self):
        if self.label not in REGION_LABELS:
            raise ValueError(f"unknown region label {self.label!r}")


@dataclass
class ObjectRecord:
    object_id: str
    shape: PrimitiveShape
    points: np.ndarray
    grasps: List[GraspRecord] = field(default_factory=list)

    def primitive(self) -> Primitive:
        return make_primitive(self.shape)


@dataclass
class AugmentResult:
    points: np.ndarray
    grasps: List[RigidTransform]
    frame: RigidTransform  # maps input coordinates to output coordinates


def assign_region_label(pose: RigidTransform, points: np.ndarray,
                        gripper: GripperSpec) -> str:
    """top/body/bottom from the gripper-root height against the cloud
    z-extent; expects the unrotated, centroid-framed cloud."""
    root_z = root_position(pose, gripper)[2]
    z = np.asarray(points)[:, 2]
    if root_z > z.max():
        return "top"
    if root_z < z.min():
        return "bottom"
    return "body"


def _orthonormal_basis(u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0]) if abs(u[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


def annotate_grasps(primitive: Primitive, gripper: GripperSpec, n: int,
                    rng: np.random.Generator, points: np.ndarray,
                    object_id: str = "", balance_labels: bool = False,
                    max_proposals: Optional[int] = None) -> List[GraspRecord]:
    """Sample up to n oracle-verified antipodal grasps.

    Candidates pair a surface point with the inward-ray exit point; they are
    kept when the contact width fits the opening, both contact normals lie
    in the friction cone of the closing line, and the full oracle passes.
    Returns fewer than n records (with a logged warning) when the proposal
    budget runs out.
    """
    if n <= 0:
        raise ValueError("grasp count must be positive")
    if max_proposals is None:
        max_proposals = 300 * n
    cone = gripper.friction_cone_cos
    quota = int(np.ceil(n / len(REGION_LABELS))) if balance_labels else None
    counts = {label: 0 for label in REGION_LABELS}
    records: List[GraspRecord] = []
    proposals = 0
    while len(records) < n and proposals < max_proposals:
        proposals += 1
        p1, n1 = primitive.sample_surface(1, rng)
        p1, n1 = p1[0], n1[0]
        exit_pt = ray_surface_exit(primitive, p1, -n1)
        if exit_pt is None:
            continue
        width = float(np.linalg.norm(exit_pt - p1))
        if width < 1e-4 or width > 0.98 * gripper.max_width:
            continue
        u = (exit_pt - p1) / width
        n2 = primitive.sdf_gradient(exit_pt)
        n2 /= np.linalg.norm(n2)
        if float(u @ -n1) < cone or float(-u @ -n2) < cone:
            continue
        e1, e2 = _orthonormal_basis(u)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        z_axis = np.cos(phi) * e1 + np.sin(phi) * e2
        y_axis = np.cross(z_axis, u)
        pose = RigidTransform(quat_from_matrix(np.column_stack([u, y_axis, z_axis])),
                              0.5 * (p1 + exit_pt))
        if not success_oracle(primitive, pose, gripper).success:
            continue
        label = assign_region_label(pose, points, gripper)
        # soft quota keeps the label mix near-uniform while budget remains
        if quota is not None and counts[label] >= quota and proposals < 0.75 * max_proposals:
            continue
        counts[label] += 1
        records.append(GraspRecord(object_id, pose, label, True))
    if len(records) < n:
        logger.warning("annotate_grasps: found %d of %d grasps after %d proposals",
                       len(records), n, proposals)
    return records


def augment(points: np.ndarray, grasps: Sequence[RigidTransform],
            rng: np.random.Generator, jitter_sd: float = 0.01,
            max_dropout: float = 0.4, rotate: bool = True) -> AugmentResult:
    """Shared random rotation, per-point jitter, dropout with duplication
    refill, then exact re-centering to the centroid frame.

    `frame` maps input coordinates to output coordinates (rotation plus the
    re-centering shift); jitter perturbs the cloud only.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    q = random_rotation(rng) if rotate else np.array([1.0, 0.0, 0.0, 0.0])
    pts = quat_rotate(q, pts)
    if jitter_sd > 0:
        pts = pts + rng.normal(0.0, jitter_sd, size=pts.shape)
    if max_dropout > 0:
        frac = rng.uniform(0.0, max_dropout)
        drop = int(frac * n)
        if drop > 0:
            keep = np.sort(rng.choice(n, size=n - drop, replace=False))
            dup = rng.choice(n - drop, size=drop, replace=True)
            pts = np.concatenate([pts[keep], pts[keep][dup]])
    centroid = pts.mean(axis=0)
    pts = pts - centroid
    frame = RigidTransform(q, -centroid)
    out_grasps = [frame.compose(g) for g in grasps]
    return AugmentResult(pts, out_grasps, frame)


def partial_view(points: np.ndarray, normals: np.ndarray, camera_dir: np.ndarray,
                 n: int, rng: np.random.Generator) -> np.ndarray:
    """Hemisphere culling: keep points whose outward normal faces the camera,
    then regularize to exactly n points (subsample or duplicate)."""
    d = np.asarray(camera_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    facing = np.asarray(normals) @ (-d) > 0
    kept = np.asarray(points, dtype=np.float64)[facing]
    if kept.shape[0] == 0:
        raise ValueError("camera direction sees no surface points")
    m = kept.shape[0]
    if m >= n:
        idx = rng.choice(m, size=n, replace=False)
    else:
        idx = np.concatenate([np.arange(m), rng.choice(m, size=n - m, replace=True)])
    return kept[idx]


# -- procedural generation ---------------------------------------------------

_DIM_SAMPLERS = {
    "box": lambda rng: {"sx": rng.uniform(0.03, 0.07), "sy": rng.uniform(0.03, 0.075),
                        "sz": rng.uniform(0.06, 0.16)},
    "cylinder": lambda rng: {"radius": rng.uniform(0.015, 0.035),
                             "height": rng.uniform(0.09, 0.18)},
    "sphere": lambda rng: {"radius": rng.uniform(0.02, 0.035)},
    "mug": lambda rng: {"radius": rng.uniform(0.025, 0.035),
                        "height": rng.uniform(0.08, 0.12),
                        "handle_width": 0.012, "handle_depth": 0.025,
                        "handle_height": rng.uniform(0.04, 0.06)},
}


def generate_dataset(n_objects: int, grasps_per_object: int, n_points: int,
                     kinds: Sequence[str], gripper: GripperSpec, seed: int,
                     balance_labels: bool = False,
                     id_offset: int = 0) -> List[ObjectRecord]:
    """Deterministic desk-scale dataset from (config, seed); per-object rng
    streams are split from the master seed."""
    if n_objects <= 0:
        raise ValueError("n_objects must be positive")
    children = np.random.SeedSequence(seed).spawn(n_objects)
    objects = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        kind = kinds[i % len(kinds)]
        spec = PrimitiveShape(kind, _DIM_SAMPLERS[kind](rng))
        primitive = make_primitive(spec)
        points, _ = primitive.sample_surface(n_points, rng)
        object_id = f"{kind}_{i + id_offset:03d}"
        grasps = annotate_grasps(primitive, gripper, grasps_per_object, rng,
                                 points=points, object_id=object_id,
                                 balance_labels=balance_labels)
        objects.append(ObjectRecord(object_id, spec, points, grasps))
    return objects


# -- persistence --------------------------------------------------------------


def _object_to_json(obj: ObjectRecord) -> str:
    doc = {
        "id": obj.object_id,
        "shape": obj.shape.kind,
        "dims": {k: float(v) for k, v in obj.shape.dims.items()},
        "points": [[float(c) for c in row] for row in obj.points],
        "grasps": [{
            "pose": [float(c) for c in g.pose.as_array7()],
            "label": g.label,
            "success": bool(g.success),
        } for g in obj.grasps],
    }
    return json.dumps(doc, separators=(",", ":"))


def write_dataset(objects: Sequence[ObjectRecord], path: str):
    """Atomic JSON-lines write, one object per line."""
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        for obj in objects:
            f.write(_object_to_json(obj))
            f.write("\n")
    os.replace(tmp, path)


def load_dataset(path: str) -> List[ObjectRecord]:
    objects = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            grasps = [GraspRecord(doc["id"],
                                  RigidTransform.from_array7(np.array(g["pose"])),
                                  g["label"], bool(g["success"]))
                      for g in doc["grasps"]]
            objects.append(ObjectRecord(
                doc["id"],
                PrimitiveShape(doc["shape"], doc["dims"]),
                np.array(doc["points"], dtype=np.float64),
                grasps,
            ))
    return objects
