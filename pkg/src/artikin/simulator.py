"""Ground-truth articulated objects and noisy trajectory generation.

Each mechanism maps a schedule of true configurations to the world poses of
all its parts. Loops are closed analytically (four-bar position analysis,
parallelogram) so the true poses satisfy every joint exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import NumericalFailure, ValidationError
from .obs_model import NoiseSpec
from .se3 import (
    Pose,
    compose_arr,
    pose_error_arr,
    quat_exp,
    quat_mul,
    canonicalize_quat,
    relative_arr,
)

Z_AXIS = np.array([0.0, 0.0, 1.0])
LOOP_TOL = 1e-9


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObjectTrajectory:
    """World poses of ``p`` parts over ``n`` timesteps (parts are 1-based in the API)."""

    positions: np.ndarray     # (n, p, 3)
    orientations: np.ndarray  # (n, p, 4)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        ori = np.asarray(self.orientations, dtype=float)
        if pos.ndim != 3 or pos.shape[2] != 3 or ori.shape != pos.shape[:2] + (4,):
            raise ValidationError(f"trajectory arrays have inconsistent shapes {pos.shape}, {ori.shape}")
        if pos.shape[0] < 1 or pos.shape[1] < 1:
            raise ValidationError("trajectory needs at least one timestep and one part")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "orientations", canonicalize_quat(ori))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def p(self) -> int:
        return self.positions.shape[1]

    def part(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.positions[:, i - 1], self.orientations[:, i - 1]

    def pair(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Relative observations of part ``j`` in the frame of part ``i``."""
        return relative_arr(*self.part(i), *self.part(j))

    def prefix(self, m: int) -> "ObjectTrajectory":
        return ObjectTrajectory(self.positions[:m], self.orientations[:m])

    def subset(self, idx) -> "ObjectTrajectory":
        return ObjectTrajectory(self.positions[idx], self.orientations[idx])

    def transformed(self, world: Pose) -> "ObjectTrajectory":
        p, q = compose_arr(world.position, world.orientation, self.positions, self.orientations)
        return ObjectTrajectory(p, q)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    scenario: str
    true: ObjectTrajectory
    schedule: np.ndarray          # (n, D) true configurations
    edges: tuple                  # ((i, j, variant), ...)
    dof: int
    outliers: np.ndarray          # (n, p) bool

    def pair(self, i: int, j: int):
        return self.true.pair(i, j)

    def edge_variant(self, i: int, j: int) -> str | None:
        for a, b, v in self.edges:
            if (a, b) == (i, j) or (a, b) == (j, i):
                return v
        return None


# ---------------------------------------------------------------------------
# pose helpers for mechanisms
# ---------------------------------------------------------------------------

def _rz(angle) -> np.ndarray:
    a = np.asarray(angle, dtype=float)
    return np.stack([np.cos(a / 2), np.zeros_like(a), np.zeros_like(a), np.sin(a / 2)], axis=-1)


def _chain(*poses):
    """Compose a left-to-right chain of broadcastable (p, q) pairs."""
    p, q = poses[0]
    for p2, q2 in poses[1:]:
        p, q = compose_arr(p, q, p2, q2)
    return p, q


def _const(pose: Pose, n: int):
    return np.broadcast_to(pose.position, (n, 3)).copy(), np.broadcast_to(pose.orientation, (n, 4)).copy()


def _zeros(n):
    return np.zeros((n, 3))


def _planar(x, y, yaw):
    """Poses in the z = 0 plane from arrays of x, y, yaw."""
    return np.stack([x, y, np.zeros_like(x)], axis=-1), _rz(yaw)


# ---------------------------------------------------------------------------
# mechanisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mechanism:
    """A parametrized articulated object.

    ``pose_fn(qs, rng_params)`` returns world poses ``(n, p, 3), (n, p, 4)``;
    ``schedule_fn(n, rng)`` draws true configurations ``(n, dof)``.
    """

    name: str
    parts: int
    dof: int
    edges: tuple
    pose_fn: Callable
    schedule_fn: Callable
    noise: NoiseSpec
    assumed_noise: NoiseSpec
    static_parts: tuple = ()
    workspace_center: tuple = (0.0, 0.0, 0.0)
    description: str = ""


BASE = Pose(np.array([0.4, -0.2, 0.9]), _rz(0.3))


def _uniform_sorted(lo, hi):
    def schedule(n, rng):
        return np.sort(rng.uniform(lo, hi, size=n))[:, None]
    return schedule


def _revolute_pair(base: Pose, hinge: Pose, radial: Pose):
    def poses(qs):
        n = len(qs)
        b = _const(base, n)
        door = _chain(b, _const(hinge, n), (_zeros(n), _rz(qs[:, 0])), _const(radial, n))
        return np.stack([b[0], door[0]], 1), np.stack([b[1], door[1]], 1)
    return poses


def _prismatic_pair(base: Pose, origin: Pose, axis):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)

    def poses(qs):
        n = len(qs)
        b = _const(base, n)
        o = _const(origin, n)
        d = _chain(b, o, (qs[:, :1] * axis, np.broadcast_to([1.0, 0, 0, 0], (n, 4))))
        return np.stack([b[0], d[0]], 1), np.stack([b[1], d[1]], 1)
    return poses


def microwave(radius: float = 0.35, opening: float = 1.6) -> Mechanism:
    hinge = Pose.from_rotvec([0.1, 0.25, 0.0], [0.0, 0.0, 0.2])
    radial = Pose(np.array([radius, 0.0, 0.12]), _rz(0.0))
    return Mechanism(
        "microwave", 2, 1, ((1, 2, "revolute"),),
        _revolute_pair(BASE, hinge, radial), _uniform_sorted(0.0, opening),
        NoiseSpec(0.002, math.radians(2.0), 2.0), NoiseSpec(0.002, math.radians(2.0), 2.0),
        static_parts=(1,), workspace_center=tuple(BASE.position),
        description=f"revolute door, handle radius {radius} m",
    )


def noisy_revolute(radius: float = 0.5, opening: float = math.pi) -> Mechanism:
    """Revolute link observed at sigma_pos = 0.05 m, for noise-assumption sweeps."""
    hinge = Pose.from_rotvec([0.0, 0.3, 0.1], [0.0, 0.0, 0.5])
    radial = Pose(np.array([radius, 0.0, 0.0]), _rz(0.0))
    return Mechanism(
        "noisy-revolute", 2, 1, ((1, 2, "revolute"),),
        _revolute_pair(BASE, hinge, radial), _uniform_sorted(0.0, opening),
        NoiseSpec(0.05, 0.02, 2.0), NoiseSpec(0.05, 0.05, 2.0),
        static_parts=(1,), workspace_center=tuple(BASE.position),
        description=f"revolute link, radius {radius} m, heavy position noise",
    )


def drawer(travel: float = 0.4) -> Mechanism:
    origin = Pose.from_rotvec([0.2, 0.1, -0.3], [0.0, 0.0, -0.4])
    return Mechanism(
        "drawer", 2, 1, ((1, 2, "prismatic"),),
        _prismatic_pair(BASE, origin, [1.0, 0.0, 0.0]), _uniform_sorted(0.0, travel),
        NoiseSpec(0.002, math.radians(2.0), 2.0), NoiseSpec(0.002, math.radians(2.0), 2.0),
        static_parts=(1,), workspace_center=tuple(BASE.position),
        description=f"prismatic drawer, travel {travel} m",
    )


def cabinet_two_drawers(travel: float = 0.35) -> Mechanism:
    o2 = Pose.translation(0.25, 0.0, 0.15)
    o3 = Pose.translation(0.25, 0.0, -0.15)

    def poses(qs):
        n = len(qs)
        b = _const(BASE, n)
        unit = np.broadcast_to([1.0, 0, 0, 0], (n, 4))
        d2 = _chain(b, _const(o2, n), (qs[:, :1] * np.array([1.0, 0, 0]), unit))
        d3 = _chain(b, _const(o3, n), (qs[:, 1:2] * np.array([1.0, 0, 0]), unit))
        return np.stack([b[0], d2[0], d3[0]], 1), np.stack([b[1], d2[1], d3[1]], 1)

    def schedule(n, rng):
        # the drawers are opened one after the other, then closed together
        t = np.linspace(0.0, 1.0, n)
        a = np.clip(3 * t, 0, 1) * travel
        b = np.clip(3 * t - 1, 0, 1) * travel
        back = np.clip(3 * t - 2, 0, 1)
        q = np.column_stack([a * (1 - 0.8 * back), b * (1 - 0.5 * back)])
        return q + rng.uniform(-0.005, 0.005, size=q.shape)

    noise = NoiseSpec(0.002, math.radians(2.0), 2.0)
    return Mechanism("cabinet", 3, 2, ((1, 2, "prismatic"), (1, 3, "prismatic")), poses, schedule,
                     noise, noise, static_parts=(1,), workspace_center=tuple(BASE.position),
                     description="cabinet body with two independent drawers")


def garage_door(l1: float = 1.5, l2: float = 0.5, ratio: float = -2.0, lo: float = 0.0, hi: float = math.pi) -> Mechanism:
    """Two-bar composite: the panel frame sweeps half an ellipse (semi-axes l1 + l2, |l1 - l2|)
    while turning by (1 + ratio) times the crank angle."""
    hinge = Pose.from_rotvec([0.0, 0.0, 0.0], [math.pi / 2, 0.0, 0.0])

    def poses(qs):
        n = len(qs)
        q = qs[:, 0]
        b = _const(BASE, n)
        panel = _chain(b, _const(hinge, n), (_zeros(n), _rz(q)),
                       (np.broadcast_to([l1, 0, 0], (n, 3)), _rz(ratio * q)),
                       (np.broadcast_to([l2, 0, 0], (n, 3)), _rz(np.zeros(n))))
        return np.stack([b[0], panel[0]], 1), np.stack([b[1], panel[1]], 1)

    return Mechanism(
        "garage", 2, 1, ((1, 2, "gp"),), poses, _uniform_sorted(lo, hi),
        NoiseSpec(0.05, math.radians(5.0), 6.0), NoiseSpec(0.05, math.radians(5.0), 6.0),
        static_parts=(1,), workspace_center=tuple(BASE.position),
        description="garage door on a two-bar linkage (non-circular path)",
    )


def planar_table(extent: float = 1.0) -> Mechanism:
    """A table pushed over the floor: free 2-D translation."""
    def poses(qs):
        n = len(qs)
        b = _const(Pose.identity(), n)
        t = (np.column_stack([qs[:, 0], qs[:, 1], np.zeros(n)]) + [0.5, 0.5, 0.0], _rz(np.zeros(n)))
        return np.stack([b[0], t[0]], 1), np.stack([b[1], t[1]], 1)

    def schedule(n, rng):
        return rng.uniform(0.0, extent, size=(n, 2))

    noise = NoiseSpec(0.01, math.radians(2.0), 3.0)
    return Mechanism("table", 2, 2, ((1, 2, "gp"),), poses, schedule, noise, noise,
                     static_parts=(1,), workspace_center=(1.0, 1.0, 0.0),
                     description="table translated on the floor plane (2 DOF)")


def _segment_poses(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Marker frames at segment centers for a polygonal chain of vertices (n, m, 2)."""
    a = vertices[:, :-1]
    b = vertices[:, 1:]
    mid = 0.5 * (a + b)
    d = b - a
    yaw = np.arctan2(d[..., 1], d[..., 0])
    return _planar(mid[..., 0], mid[..., 1], yaw)


def _lift(p, q, world: Pose):
    return compose_arr(world.position, world.orientation, p, q)


def yardstick_open(length: float = 0.2, spread: float = 0.6) -> Mechanism:
    """Four segments joined by three independent revolute joints."""
    def poses(qs):
        n = len(qs)
        heading = np.concatenate([np.zeros((n, 1)), np.cumsum(qs, axis=1)], axis=1)
        steps = length * np.stack([np.cos(heading), np.sin(heading)], -1)
        verts = np.concatenate([np.zeros((n, 1, 2)), np.cumsum(steps, axis=1)], axis=1)
        return _lift(*_segment_poses(verts), BASE)

    def schedule(n, rng):
        return rng.uniform(-spread, spread, size=(n, 3)) + np.array([0.4, -0.3, 0.5])

    true = NoiseSpec(0.003, math.radians(1.0), 2.0)
    assumed = NoiseSpec(0.006, math.radians(1.5), 2.0)
    edges = ((1, 2, "revolute"), (2, 3, "revolute"), (3, 4, "revolute"))
    return Mechanism("yardstick-open", 4, 3, edges, poses, schedule, true, assumed,
                     workspace_center=tuple(BASE.position),
                     description="open chain of four segments, three revolute joints")


def yardstick_closed(length: float = 0.2, lo: float = 0.6, hi: float = 2.2) -> Mechanism:
    """Four equal segments closed into a rhombus: one DOF (the rhombus angle)."""
    def poses(qs):
        alpha = qs[:, 0]
        n = len(alpha)
        e1 = np.broadcast_to([length, 0.0], (n, 2))
        e2 = length * np.stack([np.cos(alpha), np.sin(alpha)], -1)
        v0 = np.zeros((n, 2))
        verts = np.stack([v0, v0 + e1, v0 + e1 + e2, v0 + e2, v0], axis=1)
        return _lift(*_segment_poses(verts), BASE)

    true = NoiseSpec(0.003, math.radians(1.0), 2.0)
    assumed = NoiseSpec(0.006, math.radians(1.5), 2.0)
    edges = ((1, 2, "revolute"), (2, 3, "revolute"), (3, 4, "revolute"), (1, 4, "revolute"))
    return Mechanism("yardstick-closed", 4, 1, edges, poses, _uniform_sorted(lo, hi), true, assumed,
                     workspace_center=tuple(BASE.position),
                     description="four segments closed into a rhombus, one DOF")


def car_door(radius: float = 1.9) -> Mechanism:
    """Car body, door (large-radius revolute) and window (prismatic in the door)."""
    hinge = Pose.translation(0.0, 0.0, 0.0)
    radial = Pose(np.array([radius, 0.0, 0.3]), _rz(0.0))
    window0 = Pose.translation(-0.8, 0.0, 0.3)

    def poses(qs):
        n = len(qs)
        b = _const(BASE, n)
        door = _chain(b, _const(hinge, n), (_zeros(n), _rz(qs[:, 0])), _const(radial, n))
        win = _chain(door, _const(window0, n), (qs[:, 1:2] * Z_AXIS, _rz(np.zeros(n))))
        return np.stack([b[0], door[0], win[0]], 1), np.stack([b[1], door[1], win[1]], 1)

    def schedule(n, rng):
        return np.column_stack([np.sort(rng.uniform(0.0, 1.0, n)), rng.uniform(-0.4, 0.0, n)])

    noise = NoiseSpec(0.005, math.radians(2.0), 5.0)
    return Mechanism("car-door", 3, 2, ((1, 2, "revolute"), (2, 3, "prismatic")), poses, schedule,
                     noise, noise, static_parts=(1,), workspace_center=tuple(BASE.position),
                     description=f"car door (radius {radius} m) with a sliding window")


def four_bar_angles(ground: float, crank: float, coupler: float, rocker: float, theta2):
    """Coupler and rocker angles of a four-bar (open assembly) for crank angles ``theta2``.

    Ground pivots at (0, 0) and (ground, 0). Raises when the loop cannot close.
    """
    t2 = np.asarray(theta2, dtype=float)
    ax = crank * np.cos(t2)
    ay = crank * np.sin(t2)
    dx = ground - ax
    dy = -ay
    dist2 = dx * dx + dy * dy
    dist = np.sqrt(dist2)
    # circle-circle intersection for the coupler/rocker joint
    a = (coupler ** 2 - rocker ** 2 + dist2) / (2 * dist)
    h2 = coupler ** 2 - a * a
    if np.any(h2 < -LOOP_TOL) or np.any(dist < LOOP_TOL):
        raise NumericalFailure("four-bar schedule leaves the closable range")
    h = np.sqrt(np.maximum(h2, 0.0))
    mx = ax + a * dx / dist
    my = ay + a * dy / dist
    bx = mx - h * dy / dist
    by = my + h * dx / dist
    theta3 = np.arctan2(by - ay, bx - ax)
    theta4 = np.arctan2(by, bx - ground)
    return theta3, theta4, np.stack([ax, ay], -1), np.stack([bx, by], -1)


def four_bar(ground=0.3, crank=0.12, coupler=0.32, rocker=0.25, lo=0.6, hi=2.0, name="four-bar") -> Mechanism:
    """Ground (part 1), crank (2), coupler (3), rocker (4); one DOF."""
    def poses(qs):
        t2 = qs[:, 0]
        n = len(t2)
        _, _, a, b = four_bar_angles(ground, crank, coupler, rocker, t2)
        o2 = np.zeros((n, 2))
        o4 = np.broadcast_to([ground, 0.0], (n, 2))
        segs = [np.stack([o4, o2], 1), np.stack([o2, a], 1), np.stack([a, b], 1), np.stack([b, o4], 1)]
        ps, qq = zip(*[_segment_poses(s) for s in segs])
        p = np.concatenate(ps, axis=1)
        q = np.concatenate(qq, axis=1)
        return _lift(p, q, BASE)

    true = NoiseSpec(0.003, math.radians(1.0), 2.0)
    assumed = NoiseSpec(0.006, math.radians(1.5), 2.0)
    edges = ((1, 2, "revolute"), (2, 3, "revolute"), (3, 4, "revolute"), (1, 4, "revolute"))
    return Mechanism(name, 4, 1, edges, poses, _uniform_sorted(lo, hi), true, assumed,
                     workspace_center=tuple(BASE.position), description="four-bar linkage")


def random_four_bar(seed: int) -> Mechanism:
    """Grashof crank-rocker with random proportions; the crank sweeps a safe sub-range."""
    rng = np.random.default_rng(seed)
    while True:
        g, c, cp, r = rng.uniform(0.15, 0.35), rng.uniform(0.06, 0.12), rng.uniform(0.15, 0.35), rng.uniform(0.15, 0.35)
        lengths = sorted([g, c, cp, r])
        if c != lengths[0] or lengths[0] + lengths[3] > lengths[1] + lengths[2] - 0.02:
            continue
        start = rng.uniform(0.0, math.pi)
        sweep = rng.uniform(1.0, 2.0)
        try:
            four_bar_angles(g, c, cp, r, np.linspace(start, start + sweep, 50))
        except NumericalFailure:
            continue
        return four_bar(g, c, cp, r, start, start + sweep, name=f"four-bar-{seed}")


# prior suite: five mechanisms with distinct relative geometry
PRIOR_SUITE = (
    ("door-a", "revolute", 0.55, 8),
    ("door-b", "revolute", 0.30, 8),
    ("desk-drawer", "prismatic", (1.0, 0.0, 0.0), 7),
    ("window", "prismatic", (0.0, 0.0, 1.0), 7),
    ("oven", "revolute", 0.45, 7),
)


def prior_mechanism(name: str, grasp: np.ndarray | None = None) -> Mechanism:
    """Mechanism from the prior suite; ``grasp`` perturbs the handle offset (m)."""
    grasp = np.zeros(3) if grasp is None else np.asarray(grasp, float)
    noise = NoiseSpec(0.05, math.radians(5.0), 3.0)
    assumed = NoiseSpec(0.05, 0.1, 3.0)
    base = Pose.identity()
    for key, variant, geom, _ in PRIOR_SUITE:
        if key != name:
            continue
        if key == "door-a":
            hinge = Pose.translation(0.0, 0.3, 0.0)
            fn = _revolute_pair(base, hinge, Pose(np.array([geom, 0.0, 0.0]) + grasp, _rz(0.0)))
            sched = _uniform_sorted(0.0, 1.7)
        elif key == "door-b":
            hinge = Pose.from_rotvec([0.5, -0.4, 0.2], [0.0, 0.0, math.pi])
            fn = _revolute_pair(base, hinge, Pose(np.array([geom, 0.0, 0.0]) + grasp, _rz(0.0)))
            sched = _uniform_sorted(-1.6, 0.0)
        elif key == "oven":
            hinge = Pose.from_rotvec([0.3, 0.0, -0.6], [math.pi / 2, 0.0, 0.0])
            fn = _revolute_pair(base, hinge, Pose(np.array([geom, 0.0, 0.0]) + grasp, _rz(0.0)))
            sched = _uniform_sorted(0.0, 1.5)
        else:
            # travel long enough that the motion beats the configuration prior at sigma_pos = 0.05
            offset = np.array([0.4, 0.0, 0.3]) if key == "desk-drawer" else np.array([-0.3, 0.5, -0.5])
            fn = _prismatic_pair(base, Pose(offset + grasp, _rz(0.0)), geom)
            sched = _uniform_sorted(0.0, 0.7 if key == "desk-drawer" else 0.8)
        return Mechanism(key, 2, 1, ((1, 2, variant),), fn, sched, noise, assumed,
                         static_parts=(1,), workspace_center=(0.0, 0.0, 0.0),
                         description=f"prior-suite {variant} mechanism")
    raise ValidationError(f"unknown prior-suite mechanism {name!r}")


SCENARIOS: dict[str, Callable[[], Mechanism]] = {
    "microwave": microwave,
    "drawer": drawer,
    "cabinet": cabinet_two_drawers,
    "garage": garage_door,
    "table": planar_table,
    "yardstick-open": yardstick_open,
    "yardstick-closed": yardstick_closed,
    "car-door": car_door,
    "four-bar": four_bar,
    "noisy-revolute": noisy_revolute,
}
DEFAULT_N = {"microwave": 20, "drawer": 20, "cabinet": 60, "garage": 20, "table": 60,
             "yardstick-open": 80, "yardstick-closed": 60, "car-door": 40, "four-bar": 60,
             "noisy-revolute": 50}


def mechanism(name: str) -> Mechanism:
    if name in SCENARIOS:
        return SCENARIOS[name]()
    if name.startswith("four-bar-"):
        try:
            return random_four_bar(int(name.rsplit("-", 1)[1]))
        except ValueError:
            pass
    for key, *_ in PRIOR_SUITE:
        if name == key:
            return prior_mechanism(key)
    raise ValidationError(f"unknown scenario {name!r}; known: {', '.join(scenario_names())}")


def scenario_names() -> list[str]:
    return list(SCENARIOS) + [k for k, *_ in PRIOR_SUITE]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    n: int | None = None
    noise: NoiseSpec | None = None   # None: the mechanism's own noise
    outlier_rate: float = 0.0
    seed: int = 0
    noise_free: bool = False
    mech: Mechanism | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValidationError(f"outlier_rate must lie in [0, 1), got {self.outlier_rate}")
        if self.n is not None and self.n < 1:
            raise ValidationError("n must be >= 1")

    def mechanism(self) -> Mechanism:
        return self.mech if self.mech is not None else mechanism(self.name)


def perturb_poses(p, q, noise: NoiseSpec, rng: np.random.Generator):
    """Position noise N(0, sigma_pos^2 I); rotation about a uniform axis by N(0, sigma_orient^2)."""
    shape = p.shape[:-1]
    axis = rng.normal(size=shape + (3,))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = rng.normal(0.0, noise.sigma_orient, size=shape)
    p2 = p + rng.normal(0.0, noise.sigma_pos, size=shape + (3,))
    q2 = canonicalize_quat(quat_mul(q, quat_exp(axis * angle[..., None])))
    return p2, q2


def uniform_poses(shape, center, diameter: float, rng: np.random.Generator):
    """Positions uniform in a ball of the given diameter; orientations uniform on SO(3)."""
    d = rng.normal(size=shape + (3,))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    r = 0.5 * diameter * rng.uniform(size=shape) ** (1.0 / 3.0)
    q = rng.normal(size=shape + (4,))
    return np.asarray(center) + d * r[..., None], canonicalize_quat(q / np.linalg.norm(q, axis=-1, keepdims=True))


def true_poses(mech: Mechanism, schedule: np.ndarray) -> ObjectTrajectory:
    p, q = mech.pose_fn(np.asarray(schedule, dtype=float).reshape(len(schedule), mech.dof))
    return ObjectTrajectory(p, q)


def generate(spec: ScenarioSpec) -> tuple[ObjectTrajectory, GroundTruth]:
    mech = spec.mechanism()
    n = spec.n or DEFAULT_N.get(mech.name, 40)
    noise = spec.noise or mech.noise
    rng = np.random.default_rng(spec.seed)
    sched = mech.schedule_fn(n, rng)
    true = true_poses(mech, sched)
    p, q = true.positions.copy(), true.orientations.copy()
    outl = np.zeros((n, mech.parts), dtype=bool)
    if not spec.noise_free:
        np_, nq = perturb_poses(p, q, noise, rng)
        moving = np.array([i + 1 not in mech.static_parts for i in range(mech.parts)])
        p[:, moving] = np_[:, moving]
        q[:, moving] = nq[:, moving]
        if spec.outlier_rate > 0:
            outl = (rng.uniform(size=(n, mech.parts)) < spec.outlier_rate) & moving[None, :]
            up, uq = uniform_poses((n, mech.parts), mech.workspace_center, noise.workspace_diameter, rng)
            p[outl] = up[outl]
            q[outl] = uq[outl]
    truth = GroundTruth(mech.name, true, sched, mech.edges, mech.dof, outl)
    return ObjectTrajectory(p, q), truth


def held_out(spec: ScenarioSpec, n: int = 200) -> GroundTruth:
    """Noise-free ground truth over a fresh schedule (different seed stream)."""
    _, truth = generate(replace(spec, n=n, seed=spec.seed + 10_000_019, noise_free=True, outlier_rate=0.0))
    return truth


def prior_suite(seed: int = 0, n: int = 30, noise: NoiseSpec | None = None, grasp_sigma: float = 0.01):
    """Trajectories from the five prior mechanisms (8/8/7/7/7), each with its own grasp offset.

    Returns ``[(mechanism_name, trajectory, truth), ...]`` in suite order.
    """
    rng = np.random.default_rng(seed)
    out = []
    for key, _, _, count in PRIOR_SUITE:
        for _ in range(count):
            grasp = rng.normal(0.0, grasp_sigma, size=3)
            mech = prior_mechanism(key, grasp)
            spec = ScenarioSpec(key, n=n, noise=noise or mech.noise, seed=int(rng.integers(2 ** 32)), mech=mech)
            traj, truth = generate(spec)
            out.append((key, traj, truth))
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorReport:
    pos_error: float
    ang_error: float
    n: int

    def to_dict(self) -> dict:
        return {"pos_error": self.pos_error, "ang_error": self.ang_error, "n": self.n}


def link_error(model, p: np.ndarray, q: np.ndarray, noise: NoiseSpec | None = None) -> ErrorReport:
    """Mean positional/angular error of projecting held-out noise-free poses onto ``model``."""
    pp, qp = model.project_arr(p, q, noise)
    pe, ae = pose_error_arr(p, q, pp, qp)
    return ErrorReport(float(np.mean(pe)), float(np.mean(ae)), len(p))


def evaluate_link(model, truth: GroundTruth, i: int = 1, j: int = 2, noise: NoiseSpec | None = None) -> dict:
    p, q = truth.pair(i, j)
    rep = link_error(model, p, q, noise).to_dict()
    expected = truth.edge_variant(i, j)
    rep["variant"] = model.variant
    rep["variant_correct"] = expected is None or expected == model.variant
    return rep


def evaluate_graph(graph, truth: GroundTruth) -> dict:
    """Structure and DOF correctness of a learned graph against the ground truth."""
    true_edges = {tuple(sorted((a, b))) for a, b, _ in truth.edges}
    sel = set(graph.selected_edges)
    variants_ok = all(graph.edge_models[e].variant == truth.edge_variant(*e) for e in sel if e in true_edges)
    return {
        "edges_correct": sel == true_edges,
        "variants_correct": bool(variants_ok and sel == true_edges),
        "dof": graph.dof_total,
        "dof_correct": graph.dof_total == truth.dof,
        "selected_edges": sorted([list(e) for e in sel]),
    }
