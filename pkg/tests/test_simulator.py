import math

import numpy as np
import pytest

from artikin.errors import NumericalFailure, ValidationError
from artikin.models import PrismaticModel, RigidModel
from artikin.se3 import Pose, quat_conj, quat_log, quat_mul, quat_rotate
from artikin.simulator import (
    DEFAULT_N,
    ScenarioSpec,
    four_bar_angles,
    generate,
    held_out,
    link_error,
    mechanism,
    perturb_poses,
    random_four_bar,
    scenario_names,
)
from artikin.obs_model import NoiseSpec


def test_noise_free_equals_truth():
    traj, truth = generate(ScenarioSpec("car-door", seed=3, noise_free=True))
    np.testing.assert_array_equal(traj.positions, truth.true.positions)
    np.testing.assert_array_equal(traj.orientations, truth.true.orientations)


def test_microwave_protocol():
    traj, truth = generate(ScenarioSpec("microwave", seed=0))
    assert traj.n == 20 == DEFAULT_N["microwave"] and traj.p == 2
    m = mechanism("microwave")
    assert m.noise.sigma_pos == 0.002 and m.noise.sigma_orient == pytest.approx(math.radians(2))
    assert truth.schedule.shape == (20, 1)


@pytest.mark.parametrize("name", ["yardstick-closed", "four-bar-0", "four-bar-7", "four-bar-21"])
def test_loop_closure_of_true_poses(name):
    # consecutive segments share a joint point on both segment axes, at a fixed
    # offset along each axis; a loop that drifts apart breaks this at some step
    _, truth = generate(ScenarioSpec(name, n=30, seed=1, noise_free=True))
    t = truth.true
    ex = np.broadcast_to([1.0, 0.0, 0.0], (t.n, 3))
    for i in range(4):
        j = (i + 1) % 4
        xi = quat_rotate(t.orientations[:, i], ex)
        xj = quat_rotate(t.orientations[:, j], ex)
        d = t.positions[:, j] - t.positions[:, i]
        A = np.stack([xi, -xj], -1)
        sol = np.linalg.lstsq(A[0], d[0], rcond=None)[0]
        res = np.linalg.norm(np.einsum("nij,j->ni", A, sol) - d, axis=1)
        assert res.max() < 1e-9, (name, i)
    assert mechanism(name).dof == 1


def test_four_bar_closure_oracle():
    g, c, cp, r = 0.3, 0.12, 0.32, 0.25
    t2 = np.linspace(0.6, 2.0, 25)
    t3, t4, a, b = four_bar_angles(g, c, cp, r, t2)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), c, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(b - a, axis=1), cp, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(b - [g, 0], axis=1), r, atol=1e-12)
    with pytest.raises(NumericalFailure):
        four_bar_angles(1.0, 0.1, 0.1, 0.1, [0.0])


def test_random_four_bar_is_reproducible():
    a, b = random_four_bar(11), random_four_bar(11)
    ta, _ = generate(ScenarioSpec("x", seed=2, mech=a))
    tb, _ = generate(ScenarioSpec("x", seed=2, mech=b))
    np.testing.assert_array_equal(ta.positions, tb.positions)


def test_determinism_and_distinct_seeds():
    a, _ = generate(ScenarioSpec("drawer", seed=4))
    b, _ = generate(ScenarioSpec("drawer", seed=4))
    c, _ = generate(ScenarioSpec("drawer", seed=5))
    np.testing.assert_array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_empirical_noise_matches_noise_level():
    rng = np.random.default_rng(0)
    n = 20000
    noise = NoiseSpec(0.01, 0.05)
    p = np.zeros((n, 3))
    q = np.tile([1.0, 0, 0, 0], (n, 1))
    pp, qq = perturb_poses(p, q, noise, rng)
    assert np.std(pp) == pytest.approx(0.01, rel=0.1)
    rv = quat_log(quat_mul(quat_conj(q), qq))
    assert np.sqrt(np.mean(rv ** 2)) == pytest.approx(0.05 / math.sqrt(3), rel=0.1)
    # axis uniform: each component carries a third of the squared angle
    ang = np.linalg.norm(rv, axis=1)
    assert np.sqrt(np.mean(ang ** 2)) == pytest.approx(0.05, rel=0.1)


def test_empirical_outlier_fraction():
    _, truth = generate(ScenarioSpec("microwave", n=2000, seed=1, outlier_rate=0.2))
    frac = truth.outliers[:, 1].mean()
    assert abs(frac - 0.2) <= 0.05
    assert not truth.outliers[:, 0].any()  # static base untouched


def _true_prismatic(truth):
    """Exact drawer model rebuilt from noise-free relative poses and the schedule."""
    p, q = truth.pair(1, 2)
    sched = truth.schedule[:, 0]
    axis = (p[-1] - p[0]) / (sched[-1] - sched[0])
    origin = Pose(p[0] - sched[0] * axis, q[0])
    local = quat_rotate(quat_conj(q[0]), axis)  # axis is expressed in the origin frame
    return PrismaticModel(origin, local), np.linalg.norm(axis)


def test_perfect_model_zero_error():
    truth = held_out(ScenarioSpec("drawer", seed=0))
    exact, scale = _true_prismatic(truth)
    assert scale == pytest.approx(1.0, abs=1e-12)
    rep = link_error(exact, *truth.pair(1, 2))
    assert rep.pos_error < 1e-12 and rep.ang_error < 1e-9


def test_rigid_model_error_is_mean_travel():
    truth = held_out(ScenarioSpec("drawer", seed=0), n=500)
    exact, _ = _true_prismatic(truth)
    rep = link_error(RigidModel(exact.origin), *truth.pair(1, 2))
    assert rep.pos_error == pytest.approx(np.mean(np.abs(truth.schedule[:, 0])), rel=1e-9)
    assert rep.pos_error == pytest.approx(0.2, abs=0.02)  # half of the 0.4 m travel


def test_validation():
    with pytest.raises(ValidationError):
        mechanism("spaceship")
    with pytest.raises(ValidationError):
        ScenarioSpec("drawer", outlier_rate=1.0)
    assert "garage" in scenario_names() and "door-a" in scenario_names()
