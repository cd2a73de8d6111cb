"""Candidate link models: rigid, prismatic, revolute and GP.

Every model maps a configuration ``q`` (shape ``(d,)``) to the relative
transform between two parts and back. The ``*_arr`` methods work on stacked
poses and are what the estimators call; the module-level functions are the
single-pose API.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import ClassVar, Sequence

import numpy as np

from .errors import DegenerateSampleError, GpTrainingError
from .gp import GpParams, flatten_poses, gp_train
from .obs_model import NoiseSpec
from .se3 import (
    Pose,
    quat_conj,
    quat_left_matrix,
    quat_right_matrix,
    quat_to_matrix,
    canonicalize_quat,
    quat_mul,
    quat_rotate,
    relative_arr,
    residual_arr,
    retract_arr,
    rot_z_angle_arr,
    matrix_to_quat,
    stack,
    wrap_angle,
)

VARIANTS = ("rigid", "prismatic", "revolute", "gp")
MIN_SAMPLES = {"rigid": 1, "prismatic": 2, "revolute": 3}

COINCIDENT_EPS = 1e-6   # m
COLLINEAR_EPS = 1e-9    # m^2 (triangle area)
JACOBIAN_STEP = 1e-5

DEFAULT_NOISE = NoiseSpec()


def _empty_range(d: int) -> np.ndarray:
    r = np.empty((d, 2))
    r[:, 0] = np.inf
    r[:, 1] = -np.inf
    return r


@dataclass(frozen=True, eq=False)
class LinkModel:
    variant: ClassVar[str] = ""
    config_range: np.ndarray | None = field(default=None, kw_only=True)

    @property
    def dof(self) -> int:
        raise NotImplementedError

    @property
    def param_count(self) -> int:
        raise NotImplementedError

    @property
    def chart_dim(self) -> int:
        return 0

    def forward_arr(self, qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def inverse_arr(self, p: np.ndarray, q: np.ndarray, noise: NoiseSpec | None = None) -> np.ndarray:
        return np.zeros((len(p), 0))

    def perturb(self, delta: np.ndarray) -> "LinkModel":
        return self

    def project_arr(self, p, q, noise=None):
        """Forward of inverse: the model's prediction for each observation."""
        return self.forward_arr(self.inverse_arr(p, q, noise))


@dataclass(frozen=True, eq=False)
class RigidModel(LinkModel):
    variant: ClassVar[str] = "rigid"
    offset: Pose

    dof = property(lambda self: 0)
    param_count = property(lambda self: 6)
    chart_dim = property(lambda self: 6)

    def forward_arr(self, qs):
        n = len(qs)
        return (np.broadcast_to(self.offset.position, (n, 3)).copy(),
                np.broadcast_to(self.offset.orientation, (n, 4)).copy())

    def perturb(self, delta):
        return RigidModel(Pose(*retract_arr(self.offset.position, self.offset.orientation, delta)),
                          config_range=self.config_range)


@dataclass(frozen=True, eq=False)
class PrismaticModel(LinkModel):
    """``origin (+) translate(q * axis)``; the axis lives in the origin frame."""

    variant: ClassVar[str] = "prismatic"
    origin: Pose
    axis: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.axis, dtype=float).reshape(3)
        nrm = np.linalg.norm(e)
        if nrm < COINCIDENT_EPS:
            raise DegenerateSampleError("prismatic axis has zero length")
        e = e / nrm
        e.setflags(write=False)
        object.__setattr__(self, "axis", e)
        object.__setattr__(self, "_world_axis", quat_rotate(self.origin.orientation, e))

    dof = property(lambda self: 1)
    param_count = property(lambda self: 9)
    chart_dim = property(lambda self: 9)

    def forward_arr(self, qs):
        qs = np.asarray(qs, dtype=float).reshape(-1, 1)
        p = self.origin.position + qs * self._world_axis
        return p, np.broadcast_to(self.origin.orientation, (len(qs), 4)).copy()

    def inverse_arr(self, p, q, noise=None):
        return ((p - self.origin.position) @ self._world_axis)[:, None]

    def perturb(self, delta):
        origin = Pose(*retract_arr(self.origin.position, self.origin.orientation, delta[:6]))
        # the axis step is taken in the (unperturbed) origin frame, then renormalized
        return PrismaticModel(origin, self.axis + delta[6:9], config_range=self.config_range)


_QK = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class RevoluteModel(LinkModel):
    """``center (+) rot_z(q) (+) radial``; the hinge axis is the center's local z."""

    variant: ClassVar[str] = "revolute"
    center: Pose
    radial: Pose

    def __post_init__(self):
        c, r = self.center, self.radial
        rc = quat_to_matrix(c.orientation)
        # orientation(q) = cos(q/2) * A + sin(q/2) * B
        qa = quat_mul(c.orientation, r.orientation)
        qb = quat_mul(quat_mul(c.orientation, _QK), r.orientation)
        # yaw extraction: conj(c) * z * conj(r) as one linear map on z
        yaw_map = quat_left_matrix(quat_conj(c.orientation)) @ quat_right_matrix(quat_conj(r.orientation))
        object.__setattr__(self, "_cache", (rc, qa, qb, yaw_map))

    dof = property(lambda self: 1)
    param_count = property(lambda self: 12)
    chart_dim = property(lambda self: 12)

    @property
    def radius(self) -> float:
        return float(np.hypot(self.radial.position[0], self.radial.position[1]))

    @property
    def axis(self) -> np.ndarray:
        return self._cache[0][:, 2].copy()

    def circle_center(self) -> np.ndarray:
        """Center of the circle traced by the moving part's origin."""
        return self.center.position + self._cache[0][:, 2] * self.radial.position[2]

    def forward_arr(self, qs):
        qs = np.asarray(qs, dtype=float).reshape(-1)
        rc, qa, qb, _ = self._cache
        x, y, z = self.radial.position
        cq, sq = np.cos(qs), np.sin(qs)
        local = np.stack([cq * x - sq * y, sq * x + cq * y, np.full_like(qs, z)], axis=-1)
        p = self.center.position + local @ rc.T
        o = np.cos(0.5 * qs)[:, None] * qa + np.sin(0.5 * qs)[:, None] * qb
        return p, canonicalize_quat(o)

    def inverse_arr(self, p, q, noise=None):
        noise = noise or DEFAULT_NOISE
        rc, _, _, yaw_map = self._cache
        r = self.radial
        # angle from the orientation: yaw of c^-1 z r^-1
        q_rot, _ = rot_z_angle_arr(q @ yaw_map.T)
        rho = self.radius
        if rho < COINCIDENT_EPS:
            return np.asarray(q_rot, dtype=float).reshape(-1, 1)
        # angle from the position in the hinge plane
        local = (p - self.center.position) @ rc
        q_pos = np.arctan2(local[:, 1], local[:, 0]) - math.atan2(r.position[1], r.position[0])
        w_pos = rho ** 2 / noise.sigma_pos ** 2
        w_rot = 1.0 / noise.sigma_orient ** 2
        q_hat = q_pos + (w_rot / (w_pos + w_rot)) * wrap_angle(q_rot - q_pos)
        return np.asarray(wrap_angle(q_hat), dtype=float).reshape(-1, 1)

    def perturb(self, delta):
        c = Pose(*retract_arr(self.center.position, self.center.orientation, delta[:6]))
        r = Pose(*retract_arr(self.radial.position, self.radial.orientation, delta[6:12]))
        return RevoluteModel(c, r, config_range=self.config_range)


@dataclass(frozen=True, eq=False)
class GpModel(LinkModel):
    variant: ClassVar[str] = "gp"
    params: GpParams

    @property
    def dof(self) -> int:
        return self.params.latent_dim

    @property
    def param_count(self) -> int:
        return 1 + self.dof + 6 * self.params.n

    def forward_arr(self, qs):
        qs = np.asarray(qs, dtype=float).reshape(-1, self.dof)
        return self.params.predict(qs)

    def inverse_arr(self, p, q, noise=None):
        return self.params.project(flatten_poses(p, q))


# ---------------------------------------------------------------------------
# single-pose API
# ---------------------------------------------------------------------------

def _as_config(model: LinkModel, q) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float)) if model.dof else np.zeros(0)
    if q.shape != (model.dof,):
        raise ValueError(f"{model.variant} expects a {model.dof}-vector configuration, got shape {q.shape}")
    return q


def forward(model: LinkModel, q=()) -> Pose:
    q = _as_config(model, q)
    p, o = model.forward_arr(q[None, :])
    return Pose(p[0], o[0])


def inverse(model: LinkModel, z: Pose, noise: NoiseSpec | None = None) -> np.ndarray:
    if model.dof == 0:
        return np.zeros(0)
    return model.inverse_arr(z.position[None], z.orientation[None], noise)[0]


def fit_minimal(variant: str, samples: Sequence[Pose]) -> LinkModel:
    """Closed-form model from a minimal sample set (1, 2 or 3 poses)."""
    if variant not in MIN_SAMPLES:
        raise ValueError(f"{variant!r} has no minimal-sample fit")
    need = MIN_SAMPLES[variant]
    if len(samples) != need:
        raise ValueError(f"{variant} needs exactly {need} samples, got {len(samples)}")
    if variant == "rigid":
        return RigidModel(offset=samples[0])
    if variant == "prismatic":
        a, b = samples
        diff = b.position - a.position
        if np.linalg.norm(diff) < COINCIDENT_EPS:
            raise DegenerateSampleError("prismatic samples coincide")
        return PrismaticModel(origin=a, axis=quat_rotate(quat_conj(a.orientation), diff))
    return _fit_revolute(*samples)


def circumcenter(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Circumcenter and unnormalized plane normal of three points."""
    a = p1 - p3
    b = p2 - p3
    axb = np.cross(a, b)
    denom = 2.0 * np.dot(axb, axb)
    center = p3 + np.cross(np.dot(a, a) * b - np.dot(b, b) * a, axb) / denom
    return center, axb


def _fit_revolute(z1: Pose, z2: Pose, z3: Pose) -> RevoluteModel:
    p1, p2, p3 = z1.position, z2.position, z3.position
    normal = np.cross(p2 - p1, p3 - p1)
    area = 0.5 * np.linalg.norm(normal)
    if area < COLLINEAR_EPS:
        raise DegenerateSampleError("revolute samples are collinear")
    center, _ = circumcenter(p1, p2, p3)
    axis = normal / np.linalg.norm(normal)
    # positive rotation from the first to the second sample
    if np.dot(np.cross(p1 - center, p2 - center), axis) < 0:
        axis = -axis
    x = p1 - center
    x = x - axis * np.dot(x, axis)
    x /= np.linalg.norm(x)
    y = np.cross(axis, x)
    rot = np.column_stack([x, y, axis])
    c = Pose(center, matrix_to_quat(rot))
    r = Pose(*relative_arr(c.position, c.orientation, z1.position, z1.orientation))
    return RevoluteModel(center=c, radial=r)


def train_gp_model(samples: Sequence[Pose], latent_dim: int, noise: NoiseSpec | None = None) -> GpModel:
    p, q = stack(samples)
    return GpModel(params=gp_train(p, q, latent_dim, noise or DEFAULT_NOISE))


def jacobian(model: LinkModel, q, step: float = JACOBIAN_STEP) -> np.ndarray:
    """6 x d Jacobian of the forward kinematics in the residual chart."""
    q = _as_config(model, q)
    d = model.dof
    if d == 0:
        return np.zeros((6, 0))
    plus = q[None, :] + step * np.eye(d)
    minus = q[None, :] - step * np.eye(d)
    pp, qp = model.forward_arr(plus)
    pm, qm = model.forward_arr(minus)
    return (residual_arr(pp, qp, pm, qm) / (2.0 * step)).T


def config_range_update(model: LinkModel, q) -> LinkModel:
    q = np.atleast_2d(np.asarray(q, dtype=float).reshape(-1, model.dof)) if model.dof else None
    if q is None:
        return model
    cur = model.config_range if model.config_range is not None else _empty_range(model.dof)
    new = np.column_stack([np.minimum(cur[:, 0], q.min(axis=0)), np.maximum(cur[:, 1], q.max(axis=0))])
    return replace(model, config_range=new)


def with_config_range(model: LinkModel, p: np.ndarray, q: np.ndarray, noise: NoiseSpec | None = None) -> LinkModel:
    if model.dof == 0 or len(p) == 0:
        return model
    return config_range_update(replace(model, config_range=None), model.inverse_arr(p, q, noise))


__all__ = [
    "VARIANTS", "MIN_SAMPLES", "DegenerateSampleError", "GpTrainingError", "LinkModel", "RigidModel",
    "PrismaticModel", "RevoluteModel", "GpModel", "forward", "inverse", "fit_minimal", "train_gp_model",
    "jacobian", "config_range_update", "circumcenter",
]
