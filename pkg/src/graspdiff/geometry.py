"""SE(3) pose algebra: quaternions, scaled MRPs, rigid transforms.

Quaternions are numpy arrays [w, x, y, z], canonicalized to w >= 0 (ties at
w == 0 take the first nonzero vector component positive).  The 3-parameter
rotation code `a` uses the scaled Modified Rodrigues mapping
a = s/(1+w) * [x, y, z] with scale s = 4 by default, so ||a|| <= s on the
canonical hemisphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MRP_SCALE = 4.0


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize a near-zero quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Resolve the double cover: w >= 0, ties broken on the vector part."""
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0:
        return -q
    if q[0] == 0:
        for c in q[1:]:
            if c != 0:
                return q if c > 0 else -q
    return q.copy()


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m) -> np.ndarray:
    """Shepperd's method; returns the canonical quaternion."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return quat_canonical(quat_normalize(q))


def quat_rotate(q, points) -> np.ndarray:
    """Rotate point(s) (3,) or (N, 3) by the quaternion."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ quat_to_matrix(q).T


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return quat_canonical(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def quat_to_mrp(q, scale: float = MRP_SCALE) -> np.ndarray:
    """Scaled MRP a = scale/(1+w) * [x, y, z]; expects a canonical input."""
    q = np.asarray(q, dtype=np.float64)
    if 1.0 + q[0] < 1e-12:
        raise ValueError("quaternion with w = -1 has no MRP image; canonicalize first")
    return (scale / (1.0 + q[0])) * q[1:4]


def mrp_to_quat(a, scale: float = MRP_SCALE) -> np.ndarray:
    """Exact inverse of quat_to_mrp for any finite input."""
    p = np.asarray(a, dtype=np.float64) / scale
    n2 = float(p @ p)
    q = np.concatenate([[(1.0 - n2)], 2.0 * p]) / (1.0 + n2)
    return quat_canonical(quat_normalize(q))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Axis uniform on the sphere, angle uniform in [0, pi]."""
    while True:
        axis = rng.normal(size=3)
        n = np.linalg.norm(axis)
        if n > 1e-9:
            axis /= n
            break
    angle = rng.uniform(0.0, np.pi)
    return quat_from_axis_angle(axis, angle)


@dataclass
class RigidTransform:
    """Rotation (canonical unit quaternion) followed by a translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = quat_canonical(quat_normalize(self.rotation))
        self.translation = np.asarray(self.translation, dtype=np.float64)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return quat_rotate(self.rotation, points) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other)(x) == self(other(x))."""
        return RigidTransform(
            quat_mul(self.rotation, other.rotation),
            quat_rotate(self.rotation, other.translation) + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        q_inv = quat_conjugate(self.rotation)
        return RigidTransform(q_inv, -quat_rotate(q_inv, self.translation))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_array7(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def from_array7(cls, arr) -> "RigidTransform":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != (7,):
            raise ValueError("pose array must hold 7 floats (q_w,q_x,q_y,q_z,t_x,t_y,t_z)")
        return cls(arr[:4], arr[4:])


def pose_to_h(pose: RigidTransform, scale: float = MRP_SCALE) -> np.ndarray:
    """6-vector regression target [t, a] for one grasp pose."""
    return np.concatenate([pose.translation, quat_to_mrp(pose.rotation, scale)])


def h_to_pose(h, scale: float = MRP_SCALE) -> RigidTransform:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (6,):
        raise ValueError("pose 6-vector must hold [t, a]")
    return RigidTransform(mrp_to_quat(h[3:], scale), h[:3])


def centroid_frame(points, transforms=()):
    """Shift a cloud (and attached poses) so the cloud centroid is the origin.

    Returns (points, transforms, offset); adding the offset back restores the
    original frame.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("point cloud must be a non-empty (N, 3) array")
    offset = pts.mean(axis=0)
    shifted = [RigidTransform(t.rotation, t.translation - offset) for t in transforms]
    return pts - offset, shifted, offset
