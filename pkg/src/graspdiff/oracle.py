"""Geometric grasp-success oracle.

Stands in for a physics simulator: a grasp succeeds when the open gripper
is collision-free, the closing segment actually crosses the object, the
required closing width fits the opening, and both contact normals lie
inside the friction cone about the closing axis.  Pose validity and
force-closure geometry only; dynamic effects (shake/lift torque) are out
of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .geometry import RigidTransform
from .gripper import GripperSpec, body_points, fingertip_segment
from .shapes import Primitive

FAILURE_REASONS = ("collision", "free_space", "non_antipodal", "too_wide")

_SDF_TOL = 1e-9


@dataclass(frozen=True)
class OracleResult:
    success: bool
    failure_reason: Optional[str] = None

    def __post_init__(self):
        if self.success != (self.failure_reason is None):
            raise ValueError("success flag must match the absence of a failure reason")
        if self.failure_reason is not None and self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"unknown failure reason {self.failure_reason!r}")


def _bisect_crossing(primitive, origin, direction, s_out: float, s_in: float) -> float:
    """Surface crossing between an outside and an inside offset along a line."""
    for _ in range(48):
        mid = 0.5 * (s_out + s_in)
        if primitive.sdf(origin + mid * direction) < 0:
            s_in = mid
        else:
            s_out = mid
    return 0.5 * (s_out + s_in)


def closing_line_contacts(primitive: Primitive, pose: RigidTransform,
                          gripper: GripperSpec, samples: int = 512
                          ) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Outermost surface crossings of the closing line through the grasp
    origin, searched over +-max_width; None when the object overruns the
    search range (wider than any opening) or never crosses it."""
    x_axis = pose.rotation_matrix()[:, 0]
    origin = pose.translation
    span = gripper.max_width
    s = np.linspace(-span, span, samples)
    vals = primitive.sdf(origin + s[:, None] * x_axis)
    if vals[0] < 0 or vals[-1] < 0:
        return None
    inside = vals < 0
    if not inside.any():
        return None
    first = int(np.argmax(inside))
    last = len(s) - 1 - int(np.argmax(inside[::-1]))
    s1 = _bisect_crossing(primitive, origin, x_axis, s[first - 1], s[first])
    s2 = _bisect_crossing(primitive, origin, x_axis, s[last + 1], s[last])
    return origin + s1 * x_axis, origin + s2 * x_axis


def success_oracle(primitive: Primitive, pose: RigidTransform, gripper: GripperSpec,
                   segment_samples: int = 256) -> OracleResult:
    """Evaluate one grasp pose against an object in its canonical frame."""
    if not isinstance(gripper, GripperSpec):
        raise TypeError("gripper must be a GripperSpec")

    # open-pose collision: any body sample inside the object
    body = pose.apply(body_points(gripper))
    if np.any(primitive.sdf(body) < -_SDF_TOL):
        return OracleResult(False, "collision")

    # the closing segment between open fingertips must cross the surface
    a, b = fingertip_segment(gripper)
    pa, pb = pose.apply(a), pose.apply(b)
    ts = np.linspace(0.0, 1.0, segment_samples)[:, None]
    if not np.any(primitive.sdf(pa + ts * (pb - pa)) < 0):
        return OracleResult(False, "free_space")

    contacts = closing_line_contacts(primitive, pose, gripper)
    if contacts is None:
        return OracleResult(False, "too_wide")
    c1, c2 = contacts
    width = float(np.linalg.norm(c2 - c1))
    if width > gripper.max_width:
        return OracleResult(False, "too_wide")

    # friction cones: closing force at each contact within atan(mu) of the
    # inward surface normal
    u = (c2 - c1) / width
    n1 = primitive.sdf_gradient(c1)
    n2 = primitive.sdf_gradient(c2)
    n1 = n1 / np.linalg.norm(n1)
    n2 = n2 / np.linalg.norm(n2)
    cone = gripper.friction_cone_cos
    if float(u @ -n1) < cone or float(-u @ -n2) < cone:
        return OracleResult(False, "non_antipodal")
    return OracleResult(True, None)
