"""Rotation and rigid-transform algebra for SE(2) and SE(3).

Conventions, fixed for the whole package:

* Quaternions are Hamilton, scalar first ``(w, x, y, z)``, canonicalized to
  ``w >= 0`` (ties broken on the first non-zero vector component).
* ``R(a ⊗ b) = R(a) @ R(b)``; ``R(q)`` maps body-frame vectors to the parent
  frame, so a pose ``T_world_cam`` applied to a camera-frame point gives its
  world coordinates.
* Euler angles are ZYX (yaw-pitch-roll): ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.

The dataclasses are immutable values. Array helpers suffixed ``_arr`` work on
stacks of quaternions shaped ``(..., 4)`` and skip canonicalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

EPS_AXIS = 1e-12
GIMBAL_TOL = 1e-6


class DegenerateAxis(ValueError):
    """Rotation axis has (numerically) zero length but the angle is not zero."""


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def _canonical(v: np.ndarray) -> np.ndarray:
    if v[0] < 0.0:
        return -v
    if v[0] == 0.0:
        for c in v[1:]:
            if c != 0.0:
                return -v if c < 0.0 else v
    return v


@dataclass(frozen=True)
class UnitQuaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        v = np.array([self.w, self.x, self.y, self.z], dtype=float)
        n = float(np.linalg.norm(v))
        if not np.isfinite(n) or n == 0.0:
            raise ValueError(f"cannot normalize quaternion {v}")
        v = _canonical(v / n)
        for name, c in zip("wxyz", v):
            object.__setattr__(self, name, float(c))

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, v) -> "UnitQuaternion":
        w, x, y, z = (float(c) for c in v)
        return cls(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def rotate(self, p) -> np.ndarray:
        return quat_to_matrix(self) @ np.asarray(p, dtype=float)

    def __matmul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return quat_mul(self, other)


@dataclass(frozen=True)
class EulerAngles:
    """ZYX Euler angles in radians, each wrapped to (-pi, pi].

    ``gimbal_lock`` is set by :func:`matrix_to_euler` when the pitch is within
    ``GIMBAL_TOL`` of +-pi/2; the yaw then carries the whole in-plane angle and
    roll is zeroed.
    """

    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = field(default=False, compare=False)

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])


@dataclass(frozen=True)
class RigidTransform3:
    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        t = tuple(float(c) for c in np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform3":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform3":
        m = np.asarray(m, dtype=float)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def apply(self, p) -> np.ndarray:
        return apply(self, p)

    def inverse(self) -> "RigidTransform3":
        return inverse(self)

    def __matmul__(self, other):
        return compose(self, other)


@dataclass(frozen=True)
class RigidTransform2:
    angle: float = 0.0
    translation: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "angle", _wrap_angle(float(self.angle)))
        t = tuple(float(c) for c in np.asarray(self.translation, dtype=float).reshape(2))
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform2":
        return cls()

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = self.rotation_matrix()
        m[:2, 2] = self.translation
        return m

    def apply(self, p) -> np.ndarray:
        return apply(self, p)

    def inverse(self) -> "RigidTransform2":
        return inverse(self)

    def __matmul__(self, other):
        return compose(self, other)


RigidTransform = Union[RigidTransform2, RigidTransform3]


# ---------------------------------------------------------------- quaternions


def quat_mul(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product ``a ⊗ b`` (rotate by ``b`` first, then ``a``)."""
    return UnitQuaternion.from_array(quat_mul_arr(a.as_array(), b.as_array()))


def conjugate(q: UnitQuaternion) -> UnitQuaternion:
    return q.conjugate()


def axis_angle_to_quat(axis, angle: float) -> UnitQuaternion:
    axis = np.asarray(axis, dtype=float).reshape(3)
    n = float(np.linalg.norm(axis))
    if n <= EPS_AXIS:
        if angle == 0.0:
            return UnitQuaternion.identity()
        raise DegenerateAxis(f"axis norm {n:g} too small for angle {angle:g}")
    h = 0.5 * angle
    v = math.sin(h) * axis / n
    return UnitQuaternion(math.cos(h), *v)


def rotvec_to_quat(rv) -> UnitQuaternion:
    """Axis-angle packed as ``angle * axis``; zero vector maps to identity."""
    return UnitQuaternion.from_array(rotvec_to_quat_arr(np.asarray(rv, dtype=float)))


def quat_to_rotvec(q: UnitQuaternion) -> np.ndarray:
    return quat_to_rotvec_arr(q.as_array())


def geodesic_angle(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Rotation angle of ``a⁻¹ ⊗ b`` in [0, pi].

    Equal to ``2 acos(|<a, b>|)``; the atan2 form keeps precision near zero.
    """
    return float(geodesic_angle_arr(a.as_array(), b.as_array()))


def slerp(a: UnitQuaternion, b: UnitQuaternion, u: float) -> UnitQuaternion:
    """Shortest-arc spherical interpolation.

    ``b`` is sign-flipped whenever ``<a, b> < 0``. After that flip an exactly
    antipodal pair cannot occur (``q`` and ``-q`` are the same rotation and
    become identical), so no perpendicular-arc fallback is ever needed.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"slerp parameter {u} outside [0, 1]")
    if u == 0.0:
        return a
    if u == 1.0:
        return b
    return UnitQuaternion.from_array(slerp_arr(a.as_array(), b.as_array(), u))


def quat_to_matrix(q: UnitQuaternion) -> np.ndarray:
    return quat_to_matrix_arr(q.as_array())


def matrix_to_quat(m) -> UnitQuaternion:
    return UnitQuaternion.from_array(matrix_to_quat_arr(np.asarray(m, dtype=float)))


def matrix_to_euler(m) -> EulerAngles:
    m = np.asarray(m, dtype=float)
    # atan2 form keeps pitch well conditioned near +-pi/2, unlike asin
    pitch = math.atan2(-m[2, 0], math.hypot(m[0, 0], m[1, 0]))
    if abs(abs(pitch) - math.pi / 2) <= GIMBAL_TOL:
        yaw = math.atan2(-m[0, 1], m[1, 1])
        return EulerAngles(0.0, pitch, _wrap_angle(yaw), gimbal_lock=True)
    roll = math.atan2(m[2, 1], m[2, 2])
    yaw = math.atan2(m[1, 0], m[0, 0])
    return EulerAngles(_wrap_angle(roll), pitch, _wrap_angle(yaw))


def euler_to_matrix(e: EulerAngles) -> np.ndarray:
    cr, sr = math.cos(e.roll), math.sin(e.roll)
    cp, sp = math.cos(e.pitch), math.sin(e.pitch)
    cy, sy = math.cos(e.yaw), math.sin(e.yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def quat_to_euler(q: UnitQuaternion) -> EulerAngles:
    return matrix_to_euler(quat_to_matrix(q))


def euler_to_quat(e: EulerAngles) -> UnitQuaternion:
    return matrix_to_quat(euler_to_matrix(e))


# --------------------------------------------------------- rigid transforms


def compose(a, b):
    """``a ∘ b``: apply ``b`` first. Both operands must live in the same group."""
    if isinstance(a, RigidTransform3) and isinstance(b, RigidTransform3):
        t = quat_to_matrix(a.rotation) @ b.t + a.t
        return RigidTransform3(quat_mul(a.rotation, b.rotation), t)
    if isinstance(a, RigidTransform2) and isinstance(b, RigidTransform2):
        return RigidTransform2(a.angle + b.angle, a.rotation_matrix() @ b.t + a.t)
    raise TypeError(f"cannot compose {type(a).__name__} with {type(b).__name__}")


def inverse(a):
    if isinstance(a, RigidTransform3):
        qi = a.rotation.conjugate()
        return RigidTransform3(qi, -(quat_to_matrix(qi) @ a.t))
    if isinstance(a, RigidTransform2):
        return RigidTransform2(-a.angle, -(a.rotation_matrix().T @ a.t))
    raise TypeError(f"not a rigid transform: {type(a).__name__}")


def apply(a, p) -> np.ndarray:
    """Transform a point, or an ``(N, d)`` stack of points."""
    p = np.asarray(p, dtype=float)
    if isinstance(a, RigidTransform3):
        r = quat_to_matrix(a.rotation)
    elif isinstance(a, RigidTransform2):
        r = a.rotation_matrix()
    else:
        raise TypeError(f"not a rigid transform: {type(a).__name__}")
    return p @ r.T + a.t


def transform_distance(a, b) -> tuple[float, float]:
    """(rotation angle, translation distance) between two transforms."""
    if isinstance(a, RigidTransform3):
        return geodesic_angle(a.rotation, b.rotation), float(np.linalg.norm(a.t - b.t))
    return abs(_wrap_angle(a.angle - b.angle)), float(np.linalg.norm(a.t - b.t))


# ------------------------------------------------------------ array helpers


def quat_mul_arr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj_arr(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize_arr(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix_arr(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(quat_normalize_arr(q), -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(m.shape[:-1] + (3, 3))


def matrix_to_quat_arr(m: np.ndarray) -> np.ndarray:
    """Shepperd's method, branch chosen per matrix for stability."""
    m = np.asarray(m, dtype=float)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, r in enumerate(flat):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        k = int(np.argmax([tr, r[0, 0], r[1, 1], r[2, 2]]))
        if k == 0:
            s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif k == 1:
            s = 2.0 * math.sqrt(max(1.0 + r[0, 0] - r[1, 1] - r[2, 2], 0.0))
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif k == 2:
            s = 2.0 * math.sqrt(max(1.0 + r[1, 1] - r[0, 0] - r[2, 2], 0.0))
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * math.sqrt(max(1.0 + r[2, 2] - r[0, 0] - r[1, 1], 0.0))
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        q = np.array(q)
        out[i] = _canonical(q / np.linalg.norm(q))
    return out.reshape(m.shape[:-2] + (4,))


def rotvec_to_quat_arr(rv: np.ndarray) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(h)/angle -> 1/2 as angle -> 0
    scale = np.where(angle > 1e-8, np.sin(half) / np.where(angle > 1e-8, angle, 1.0), 0.5 - angle**2 / 48.0)
    return np.concatenate([np.cos(half), scale * rv], axis=-1)


def quat_to_rotvec_arr(q: np.ndarray) -> np.ndarray:
    q = quat_normalize_arr(q)
    q = np.where(q[..., :1] < 0.0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return scale * v


def geodesic_angle_arr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = quat_mul_arr(quat_conj_arr(a), b)
    return 2.0 * np.arctan2(np.linalg.norm(d[..., 1:], axis=-1), np.abs(d[..., 0]))


def slerp_arr(a: np.ndarray, b: np.ndarray, u) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.asarray(u, dtype=float)
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0.0, -b, b)
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_t = np.sin(theta)
    small = sin_t < 1e-9
    uu = u if u.ndim == 0 else u[..., None]
    safe = np.where(small, 1.0, sin_t)
    wa = np.where(small, 1.0 - uu, np.sin((1.0 - uu) * theta) / safe)
    wb = np.where(small, uu, np.sin(uu * theta) / safe)
    return quat_normalize_arr(wa * a + wb * b)
