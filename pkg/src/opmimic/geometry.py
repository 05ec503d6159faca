"""Rigid-body poses and the robot-relative transform that conditions the model.

Conventions, used everywhere downstream:

* Quaternions are (w, x, y, z), unit norm, canonicalized to w >= 0 after
  every product so interpolated/stacked tracks stay continuous.
* ``rotate(q, v)`` maps body-frame vectors into the world frame; the robot's
  forward axis is body +x.
* All functions are pure; ``Pose``/``PoseTrack`` arrays are read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

QUAT_NORM_TOL = 1e-6


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).copy()
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-normalize and canonicalize sign so w >= 0 (double-cover choice)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValidationError("quaternion has (near-)zero norm")
    q = q / n
    flip = q[..., :1] < 0.0
    return np.where(flip, -q, q)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b (supports broadcasting over leading axes)."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = np.asarray(q, dtype=np.float64).copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q: body -> world."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_yaw(yaw: float | np.ndarray) -> np.ndarray:
    """Quaternion for a rotation about world +z."""
    half = 0.5 * np.asarray(yaw, dtype=np.float64)
    zeros = np.zeros_like(half)
    return quat_normalize(np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1))


def yaw_of(q: np.ndarray) -> float | np.ndarray:
    """Heading angle of the body +x axis projected to the x-y plane."""
    fwd = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
    return np.arctan2(fwd[..., 1], fwd[..., 0])


# ---------------------------------------------------------------------------
# pose types


@dataclass(frozen=True)
class Pose:
    """A global 3D position plus a unit orientation quaternion (w, x, y, z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        quat = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(quat)):
            raise ValidationError("pose has non-finite components")
        if abs(np.linalg.norm(quat) - 1.0) > QUAT_NORM_TOL:
            quat = quat_normalize(quat)
        elif quat[0] < 0.0:
            quat = -quat
        object.__setattr__(self, "position", _readonly(pos))
        object.__setattr__(self, "orientation", _readonly(quat))

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_xyyaw(x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        return Pose(np.array([x, y, z]), quat_from_yaw(yaw))

    def as_array(self) -> np.ndarray:
        """Flat 7-vector [px, py, pz, qw, qx, qy, qz]."""
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_array(a: np.ndarray) -> "Pose":
        a = np.asarray(a, dtype=np.float64).reshape(7)
        return Pose(a[:3], a[3:])

    @property
    def yaw(self) -> float:
        return float(yaw_of(self.orientation))


@dataclass(frozen=True)
class PoseTrack:
    """A uniformly sampled sequence of poses.

    Stored columnar (positions (F,3), orientations (F,4)) so the per-frame
    relative transform vectorizes.
    """

    positions: np.ndarray
    orientations: np.ndarray
    rate_hz: float = 50.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        quat = np.asarray(self.orientations, dtype=np.float64).reshape(-1, 4)
        if len(pos) != len(quat):
            raise ValidationError("positions/orientations length mismatch")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(quat)):
            raise ValidationError("track has non-finite components")
        quat = quat_normalize(quat)
        object.__setattr__(self, "positions", _readonly(pos))
        object.__setattr__(self, "orientations", _readonly(quat))

    @staticmethod
    def from_poses(poses, rate_hz: float = 50.0) -> "PoseTrack":
        return PoseTrack(
            np.stack([p.position for p in poses]),
            np.stack([p.orientation for p in poses]),
            rate_hz,
        )

    def __len__(self) -> int:
        return len(self.positions)

    def pose(self, i: int) -> Pose:
        return Pose(self.positions[i], self.orientations[i])

    def as_array(self) -> np.ndarray:
        """(F, 7) array of [position, quaternion] rows."""
        return np.concatenate([self.positions, self.orientations], axis=1)


# ---------------------------------------------------------------------------
# operations


def relative_pose(robot: Pose, human: Pose) -> Pose:
    """Express ``human`` in the robot's body frame."""
    q_inv = quat_conj(robot.orientation)
    rel_pos = quat_rotate(q_inv, human.position - robot.position)
    rel_quat = quat_normalize(quat_mul(q_inv, human.orientation))
    return Pose(rel_pos, rel_quat)


def compose_pose(robot: Pose, rel: Pose) -> Pose:
    """Inverse of :func:`relative_pose`: map a body-frame pose back to world."""
    pos = robot.position + quat_rotate(robot.orientation, rel.position)
    quat = quat_normalize(quat_mul(robot.orientation, rel.orientation))
    return Pose(pos, quat)


def relative_track(robot: PoseTrack, human: PoseTrack) -> PoseTrack:
    """Element-wise ``relative_pose`` with the per-frame robot pose as reference."""
    if len(robot) != len(human):
        raise ValidationError(f"track length mismatch: {len(robot)} vs {len(human)}")
    if robot.rate_hz != human.rate_hz:
        raise ValidationError("track rate mismatch")
    q_inv = quat_conj(robot.orientations)
    rel_pos = quat_rotate(q_inv, human.positions - robot.positions)
    rel_quat = quat_normalize(quat_mul(q_inv, human.orientations))
    return PoseTrack(rel_pos, rel_quat, robot.rate_hz)


def facing_angle(robot: Pose, human: Pose) -> float:
    """Angle in degrees, in [0, 180], between the robot's forward direction
    (body +x projected to x-y) and the x-y bearing from robot to human.

    Coincident x-y positions are defined as 0 degrees so metrics stay total.
    """
    fwd = quat_rotate(robot.orientation, np.array([1.0, 0.0, 0.0]))[:2]
    to_human = (human.position - robot.position)[:2]
    n_fwd = np.linalg.norm(fwd)
    n_to = np.linalg.norm(to_human)
    if n_to <= 1e-6 or n_fwd <= 1e-12:
        return 0.0
    cosang = float(np.dot(fwd, to_human) / (n_fwd * n_to))
    return float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
