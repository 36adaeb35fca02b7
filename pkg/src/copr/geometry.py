"""6-DoF pose types, relative poses, and rotation error measures.

Conventions
-----------
- Translations are 3-vectors in meters, expressed in the world frame.
- Quaternions are stored in (w, x, y, z) order and kept unit-norm.
- Quaternions are canonicalized to a non-negative scalar part; when the
  scalar part is exactly zero the first non-zero vector component is made
  non-negative. This removes the double-cover ambiguity so that rotations
  used as regression targets are unique.
- Relative translations are world-frame differences (target minus anchor),
  not anchor-camera-frame offsets.

All types are immutable values and all functions are pure, so everything in
this module is safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ZeroQuaternion

_ZERO_NORM = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def canonical_sign(q: np.ndarray) -> np.ndarray:
    """Flip the quaternion sign so its first non-zero component is positive."""
    for c in q:
        if c != 0.0:
            return -q if c < 0.0 else q
    return q


def normalize_quat(q) -> np.ndarray:
    """Scale a 4-vector to unit norm and canonical sign.

    Raises:
        ZeroQuaternion: if the input norm is at or below 1e-12.
    """
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = math.sqrt(float(np.dot(q, q)))
    if n <= _ZERO_NORM:
        raise ZeroQuaternion(f"quaternion norm {n:.3e} too small to normalize")
    return canonical_sign(q / n)


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a * b for (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    """Conjugate (inverse for unit quaternions)."""
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_yaw(yaw: float) -> np.ndarray:
    """Unit quaternion for a rotation of ``yaw`` radians about +z."""
    return normalize_quat([math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0)])


def rotate_vector(q, v) -> np.ndarray:
    """Rotate 3-vector ``v`` by unit quaternion ``q``."""
    w, x, y, z = q
    u = np.array([x, y, z], dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_slerp(qa, qb, s: float) -> np.ndarray:
    """Spherical interpolation between two unit quaternions, s in [0, 1]."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        # Nearly parallel, fall back to normalized lerp.
        return normalize_quat(qa + s * (qb - qa))
    theta = math.acos(min(1.0, dot))
    sin_theta = math.sin(theta)
    wa = math.sin((1.0 - s) * theta) / sin_theta
    wb = math.sin(s * theta) / sin_theta
    return normalize_quat(wa * qa + wb * qb)


def angular_error_deg(q_a, q_b) -> float:
    """Rotation angle in degrees between two unit quaternions.

    Computed as 2*arccos(min(1, |<q_a, q_b>|)), which is sign-invariant and
    clamped so rounding can never produce a NaN. Result lies in [0, 180].
    """
    dot = abs(float(np.dot(np.asarray(q_a, dtype=np.float64), np.asarray(q_b, dtype=np.float64))))
    return math.degrees(2.0 * math.acos(min(1.0, dot)))


def angular_error_deg_many(qs_a: np.ndarray, qs_b: np.ndarray) -> np.ndarray:
    """Row-wise :func:`angular_error_deg` for (n, 4) quaternion arrays."""
    dots = np.abs(np.einsum("ij,ij->i", qs_a, qs_b))
    return np.degrees(2.0 * np.arccos(np.minimum(1.0, dots)))


@dataclass(frozen=True)
class Pose:
    """A 6-DoF pose: world translation plus unit quaternion orientation."""

    t: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be finite")
        q = normalize_quat(self.q)
        object.__setattr__(self, "t", _readonly(t))
        object.__setattr__(self, "q", _readonly(q))


@dataclass(frozen=True)
class RelativePose:
    """Translation difference plus rotation from an anchor pose to a target.

    Flattens to exactly 7 components: (dt, dq) with dq in (w, x, y, z) order.
    """

    dt: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        dt = np.asarray(self.dt, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(dt)):
            raise ValueError("relative translation must be finite")
        dq = normalize_quat(self.dq)
        object.__setattr__(self, "dt", _readonly(dt))
        object.__setattr__(self, "dq", _readonly(dq))

    def as_vector(self) -> np.ndarray:
        """Return the stacked 7-vector (dt, dq)."""
        return np.concatenate([self.dt, self.dq])


def relative_pose(anchor: Pose, target: Pose) -> RelativePose:
    """Relative pose from ``anchor`` to ``target``.

    The translation difference is taken in the world frame; the rotation is
    anchor.q^-1 * target.q, normalized to canonical sign.
    """
    dt = target.t - anchor.t
    dq = quat_multiply(quat_conjugate(anchor.q), target.q)
    return RelativePose(dt=dt, dq=dq)
