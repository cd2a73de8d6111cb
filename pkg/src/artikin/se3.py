"""Rigid-body transforms on SE(3).

Conventions
-----------
- Quaternions are scalar-first ``(w, x, y, z)`` and canonicalized so that
  ``w >= 0`` (if ``w == 0`` the first nonzero of ``x, y, z`` is positive).
- ``compose(a, b)`` is the homogeneous product ``a @ b``; ``relative(a, b)``
  is ``inv(a) @ b``.
- Angles wrap into ``(-pi, pi]``.
- The 6-D residual chart is ``(p_z - p_d, log(R_d^T R_z))``: position
  difference in the parent frame followed by the rotation vector of the
  relative rotation.

The array helpers (``*_arr``) broadcast over leading dimensions and are what
the estimators use internally; :class:`Pose` wraps a single transform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

EPS_POSE = 1e-9
EPS_RANK = 1e-9

_TWO_PI = 2.0 * math.pi


class DegenerateMatrixError(ValueError):
    """Raised when a matrix is too close to singular to orthonormalize."""


# ---------------------------------------------------------------------------
# quaternion arrays
# ---------------------------------------------------------------------------

def canonicalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        q = q / math.sqrt(float(q @ q))
        for c in q:
            if c != 0.0:
                return -q if c < 0.0 else q
        return q
    q = q / np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    w = q[..., 0]
    flip = w < 0.0
    zero_w = w == 0.0
    if np.any(zero_w):
        # first nonzero of (x, y, z) decides the sign when w == 0
        vec = q[..., 1:]
        nz = vec != 0.0
        first = np.where(nz.any(axis=-1), np.argmax(nz, axis=-1), 0)
        lead = np.take_along_axis(vec, first[..., None], axis=-1)[..., 0]
        flip = flip | (zero_w & (lead < 0.0))
    return np.where(flip[..., None], -q, q)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim == 1 and b.ndim == 1:
        aw, ax, ay, az = a.tolist()
        bw, bx, by, bz = b.tolist()
        return np.array([
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ])
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_left_matrix(a: np.ndarray) -> np.ndarray:
    """4x4 ``L`` with ``quat_mul(a, b) == L @ b``."""
    w, x, y, z = a
    return np.array([[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]])


def quat_right_matrix(b: np.ndarray) -> np.ndarray:
    """4x4 ``R`` with ``quat_mul(a, b) == R @ a``."""
    w, x, y, z = b
    return np.array([[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _cross(a, b):
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * _cross(u, v)
    return v + w * t + _cross(u, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix (..., 3, 3) to canonical quaternion (Shepperd)."""
    m = np.asarray(m, dtype=float)
    m00, m11, m22 = m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]
    trace = m00 + m11 + m22
    cands = np.stack([trace, m00, m11, m22], axis=-1)
    k = np.argmax(cands, axis=-1)
    q = np.empty(m.shape[:-2] + (4,))
    # case 0: trace largest
    s0 = np.sqrt(np.maximum(1.0 + trace, 0.0)) * 2.0
    s1 = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0)) * 2.0
    s2 = np.sqrt(np.maximum(1.0 + m11 - m00 - m22, 0.0)) * 2.0
    s3 = np.sqrt(np.maximum(1.0 + m22 - m00 - m11, 0.0)) * 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        c0 = np.stack([0.25 * s0, (m[..., 2, 1] - m[..., 1, 2]) / s0,
                       (m[..., 0, 2] - m[..., 2, 0]) / s0, (m[..., 1, 0] - m[..., 0, 1]) / s0], -1)
        c1 = np.stack([(m[..., 2, 1] - m[..., 1, 2]) / s1, 0.25 * s1,
                       (m[..., 0, 1] + m[..., 1, 0]) / s1, (m[..., 0, 2] + m[..., 2, 0]) / s1], -1)
        c2 = np.stack([(m[..., 0, 2] - m[..., 2, 0]) / s2, (m[..., 0, 1] + m[..., 1, 0]) / s2,
                       0.25 * s2, (m[..., 1, 2] + m[..., 2, 1]) / s2], -1)
        c3 = np.stack([(m[..., 1, 0] - m[..., 0, 1]) / s3, (m[..., 0, 2] + m[..., 2, 0]) / s3,
                       (m[..., 1, 2] + m[..., 2, 1]) / s3, 0.25 * s3], -1)
    kk = k[..., None]
    q = np.where(kk == 0, c0, np.where(kk == 1, c1, np.where(kk == 2, c2, c3)))
    return canonicalize_quat(q)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle, angle in [0, pi]) of unit quaternions."""
    q = np.where((q[..., :1] < 0.0), -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1)
    w = q[..., 0]
    angle = 2.0 * np.arctan2(s, w)
    # angle / s -> 2 / w as s -> 0
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(s > 1e-12, angle / s, 2.0 / np.maximum(w, 1e-300))
    return v * scale[..., None]


def quat_exp(rv: np.ndarray) -> np.ndarray:
    """Unit quaternion from a rotation vector."""
    rv = np.asarray(rv, dtype=float)
    angle = np.linalg.norm(rv, axis=-1)
    half = 0.5 * angle
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(angle > 1e-12, np.sin(half) / angle, 0.5 - angle * angle / 48.0)
    return np.concatenate([np.cos(half)[..., None], rv * k[..., None]], axis=-1)


# ---------------------------------------------------------------------------
# pose arrays: (p[..., 3], q[..., 4])
# ---------------------------------------------------------------------------

def compose_arr(p1, q1, p2, q2):
    return p1 + quat_rotate(q1, p2), canonicalize_quat(quat_mul(q1, q2))


def inverse_arr(p, q):
    qi = quat_conj(q)
    return -quat_rotate(qi, p), canonicalize_quat(qi)


def relative_arr(p1, q1, p2, q2):
    qi = quat_conj(q1)
    return quat_rotate(qi, p2 - p1), canonicalize_quat(quat_mul(qi, q2))


def residual_arr(pz, qz, pd, qd) -> np.ndarray:
    """6-D residual of observation ``z`` against prediction ``d``."""
    rot = quat_log(quat_mul(quat_conj(qd), qz))
    return np.concatenate([pz - pd, rot], axis=-1)


def retract_arr(p, q, delta):
    """Perturb poses by a 6-D chart step: p + dp, q * exp(dw)."""
    delta = np.asarray(delta, dtype=float)
    return p + delta[..., :3], canonicalize_quat(quat_mul(q, quat_exp(delta[..., 3:])))


def wrap_angle(a):
    """Wrap into (-pi, pi]; +pi is kept, -pi maps to +pi."""
    a = np.asarray(a, dtype=float)
    out = a - _TWO_PI * np.ceil((a - math.pi) / _TWO_PI)
    return float(out) if out.ndim == 0 else out


def rot_z_angle_arr(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Yaw of the rotated x axis; second output flags degenerate rows."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    c = 1 - 2 * (y * y + z * z)
    s = 2 * (x * y + w * z)
    degenerate = np.hypot(c, s) < EPS_POSE
    ang = np.where(degenerate, 0.0, np.arctan2(s, c))
    return wrap_angle(ang), degenerate


def pose_to_matrix_arr(p, q) -> np.ndarray:
    m = np.zeros(p.shape[:-1] + (4, 4))
    m[..., :3, :3] = quat_to_matrix(q)
    m[..., :3, 3] = p
    m[..., 3, 3] = 1.0
    return m


# ---------------------------------------------------------------------------
# single pose value type
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform: position in meters, orientation as a unit quaternion."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        q = canonicalize_quat(np.array(self.orientation, dtype=float).reshape(4))
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def translation(cls, x: float, y: float = 0.0, z: float = 0.0) -> "Pose":
        return cls(np.array([x, y, z]), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], orthonormalize(m[:3, :3]))

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        v = [float(x) for x in values]
        if len(v) != 7:
            raise ValueError(f"pose needs 7 numbers, got {len(v)}")
        return cls(np.array(v[:3]), np.array(v[3:]))

    @classmethod
    def from_rotvec(cls, position, rotvec) -> "Pose":
        return cls(np.asarray(position, float), quat_exp(np.asarray(rotvec, float)))

    def to_list(self) -> list[float]:
        return [float(x) for x in self.position] + [float(x) for x in self.orientation]

    def matrix(self) -> np.ndarray:
        return pose_to_matrix_arr(self.position, self.orientation)

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def inverse(self) -> "Pose":
        return Pose(*inverse_arr(self.position, self.orientation))

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self) -> str:
        p = ", ".join(f"{x:.6g}" for x in self.position)
        q = ", ".join(f"{x:.6g}" for x in self.orientation)
        return f"Pose(p=[{p}], q=[{q}])"


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(*compose_arr(a.position, a.orientation, b.position, b.orientation))


def relative(a: Pose, b: Pose) -> Pose:
    """``a^-1 * b``: the pose of ``b`` expressed in the frame of ``a``."""
    return Pose(*relative_arr(a.position, a.orientation, b.position, b.orientation))


def rot_z(angle: float) -> Pose:
    a = wrap_angle(angle)
    return Pose(np.zeros(3), np.array([math.cos(a / 2), 0.0, 0.0, math.sin(a / 2)]))


def rot_z_angle_checked(p: Pose) -> tuple[float, bool]:
    ang, degenerate = rot_z_angle_arr(p.orientation)
    return float(ang), bool(degenerate)


def rot_z_angle(p: Pose) -> float:
    """Inverse of :func:`rot_z`; for general rotations the yaw of the x-axis image."""
    return rot_z_angle_checked(p)[0]


def translation_part(p: Pose) -> np.ndarray:
    return np.array(p.position)


def orthonormalize(m: np.ndarray) -> np.ndarray:
    """Nearest rotation (Frobenius) to a 3x3 matrix, as a unit quaternion."""
    m = np.asarray(m, dtype=float)
    u, s, vt = np.linalg.svd(m)
    if s[-1] < EPS_RANK:
        raise DegenerateMatrixError(f"matrix is rank deficient (sigma_min={s[-1]:.3g})")
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    return matrix_to_quat(r)


def orthonormalize_arr(m: np.ndarray) -> np.ndarray:
    """Batched variant of :func:`orthonormalize` without the rank check."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return matrix_to_quat(u @ vt)


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """(positional distance, rotation angle) between two poses."""
    pos = float(np.linalg.norm(a.position - b.position))
    dot = abs(float(np.dot(a.orientation, b.orientation)))
    return pos, 2.0 * math.acos(min(1.0, dot))


def pose_error_arr(pa, qa, pb, qb) -> tuple[np.ndarray, np.ndarray]:
    pos = np.linalg.norm(pa - pb, axis=-1)
    dot = np.minimum(1.0, np.abs(np.sum(qa * qb, axis=-1)))
    return pos, 2.0 * np.arccos(dot)


def residual(z: Pose, d: Pose) -> np.ndarray:
    return residual_arr(z.position, z.orientation, d.position, d.orientation)


def stack(poses: Iterable[Pose]) -> tuple[np.ndarray, np.ndarray]:
    poses = list(poses)
    if not poses:
        return np.zeros((0, 3)), np.zeros((0, 4))
    return (np.array([p.position for p in poses]),
            np.array([p.orientation for p in poses]))


def unstack(p: np.ndarray, q: np.ndarray) -> list[Pose]:
    return [Pose(pi, qi) for pi, qi in zip(p, q)]


def random_pose(rng: np.random.Generator, scale: float = 1.0) -> Pose:
    q = rng.normal(size=4)
    return Pose(rng.uniform(-scale, scale, size=3), q / np.linalg.norm(q))
