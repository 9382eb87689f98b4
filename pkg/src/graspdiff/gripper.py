"""Parallel-jaw gripper model used by annotation and the success oracle.

Grasp frame convention (used consistently everywhere): the origin sits at
the midpoint of the two contacts, x is the closing axis, z is the approach
axis pointing from the gripper root toward the object.  The root point is
at (0, 0, -root_offset) in the grasp frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .geometry import RigidTransform


@dataclass(frozen=True)
class GripperSpec:
    max_width: float = 0.085
    finger_length: float = 0.04
    finger_thickness: float = 0.01
    root_offset: float = 0.06
    mu: float = 0.5

    def __post_init__(self):
        if self.max_width <= 0 or self.mu <= 0:
            raise ValueError("gripper opening and friction coefficient must be positive")
        if self.finger_length <= 0 or self.finger_thickness <= 0:
            raise ValueError("finger dimensions must be positive")
        if self.root_offset <= self.finger_length:
            raise ValueError("root_offset must exceed finger_length (palm depth > 0)")

    @property
    def friction_cone_cos(self) -> float:
        """cos of the cone half-angle atan(mu)."""
        return 1.0 / np.sqrt(1.0 + self.mu * self.mu)

    def root_point(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.root_offset])


def body_boxes(spec: GripperSpec, width: float | None = None) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(center, half_extents) of the two fingers and the palm, in the grasp
    frame, with the fingers opened to `width` (default: fully open)."""
    if width is None:
        width = spec.max_width
    t = spec.finger_thickness
    length = spec.finger_length
    palm_depth = spec.root_offset - length
    finger_half = np.array([0.5 * t, 0.5 * t, 0.5 * length])
    boxes = [
        (np.array([0.5 * width + 0.5 * t, 0.0, -0.5 * length]), finger_half),
        (np.array([-0.5 * width - 0.5 * t, 0.0, -0.5 * length]), finger_half),
        (np.array([0.0, 0.0, -length - 0.5 * palm_depth]),
         np.array([0.5 * spec.max_width + t, 0.5 * t, 0.5 * palm_depth])),
    ]
    return boxes


def body_points(spec: GripperSpec, width: float | None = None,
                resolution: Tuple[int, int, int] = (4, 3, 5)) -> np.ndarray:
    """Deterministic collision sample grid over the gripper body boxes."""
    pts = []
    for center, half in body_boxes(spec, width):
        axes = [np.linspace(-h, h, r) for h, r in zip(half, resolution)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        pts.append(center + grid)
    return np.concatenate(pts)


def fingertip_segment(spec: GripperSpec, width: float | None = None) -> Tuple[np.ndarray, np.ndarray]:
    """Endpoints of the closing segment between the open fingertips."""
    if width is None:
        width = spec.max_width
    return np.array([-0.5 * width, 0.0, 0.0]), np.array([0.5 * width, 0.0, 0.0])


def root_position(pose: RigidTransform, spec: GripperSpec) -> np.ndarray:
    """World-frame position of the gripper root for a grasp pose."""
    return pose.apply(spec.root_point())
