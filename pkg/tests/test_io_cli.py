import csv
import json

import numpy as np
import pytest

from artikin import cli, io
from artikin.errors import ValidationError
from artikin.estimation import fit_all_candidates, select_model
from artikin.models import PrismaticModel, RevoluteModel, RigidModel, train_gp_model
from artikin.obs_model import NoiseSpec
from artikin.prior import PriorDatabase
from artikin.se3 import Pose, compose, rot_z
from artikin.simulator import ScenarioSpec, generate


def _gp():
    qs = np.linspace(0.0, 1.5, 15)
    circle = [compose(rot_z(a), Pose.translation(0.4, 0.0, 0.0)) for a in qs]
    return train_gp_model(circle, 1)


MODELS = {
    "rigid": RigidModel(Pose.from_rotvec([0.1, 0.2, 0.3], [0.3, -0.2, 0.1])),
    "prismatic": PrismaticModel(Pose.from_rotvec([0.1, 0.0, 0.3], [0.0, 0.5, 0.1]), np.array([0.0, 0.6, 0.8])),
    "revolute": RevoluteModel(Pose.from_rotvec([0.0, 0.3, 0.1], [0.2, 0.0, 0.0]),
                              Pose.translation(0.35, 0.0, 0.0)),
}


@pytest.mark.parametrize("name", ["rigid", "prismatic", "revolute", "gp"])
def test_model_roundtrip(name):
    m = _gp() if name == "gp" else MODELS[name]
    back = io.model_from_dict(json.loads(io.dumps(io.model_to_dict(m))))
    assert back.variant == m.variant
    qs = np.linspace(-0.5, 0.5, 7).reshape(-1, 1)[:, : m.dof]
    pa, qa = m.forward_arr(qs)
    pb, qb = back.forward_arr(qs)
    np.testing.assert_allclose(pb, pa, atol=1e-12)
    np.testing.assert_allclose(qb, qa, atol=1e-12)


def test_unknown_variant_rejected():
    with pytest.raises(ValidationError):
        io.model_from_dict({"variant": "screw"})


def test_fit_roundtrip():
    traj, _ = generate(ScenarioSpec("microwave", seed=1))
    best = select_model(fit_all_candidates(traj.pair(1, 2), NoiseSpec(0.002, 0.035)))
    back = io.fit_from_dict(json.loads(io.dumps(io.fit_to_dict(best))))
    assert back.variant == best.variant and back.bic == best.bic and back.gamma_hat == best.gamma_hat


def test_trajectory_roundtrip(tmp_path):
    traj, _ = generate(ScenarioSpec("cabinet", n=7, seed=2))
    path = tmp_path / "t.jsonl"
    io.write_trajectory(path, traj, NoiseSpec(0.01, 0.02), "cabinet")
    back, header = io.read_trajectory(path)
    np.testing.assert_array_equal(back.positions, traj.positions)
    np.testing.assert_allclose(back.orientations, traj.orientations, atol=1e-15)
    assert header["scenario"] == "cabinet" and header["noise"]["sigma_pos"] == 0.01


def _lines(tmp_path, n=2):
    traj, _ = generate(ScenarioSpec("drawer", n=n, seed=0))
    path = tmp_path / "t.jsonl"
    io.write_trajectory(path, traj)
    return path, path.read_text().splitlines()


@pytest.mark.parametrize("mutate", [
    lambda ls: ls[:-1],                                        # missing record
    lambda ls: ls[:-1] + [ls[1]],                              # duplicate
    lambda ls: ls[:1] + [ls[1].replace('"t"', '"time"')] + ls[2:],  # unknown key
    lambda ls: ls[:1] + [ls[1].replace('"part": 1', '"part": 9')] + ls[2:],
    lambda ls: [],                                             # empty
    lambda ls: ["{not json"],
])
def test_trajectory_validation(tmp_path, mutate):
    path, lines = _lines(tmp_path)
    path.write_text("\n".join(mutate(lines)) + "\n")
    with pytest.raises(ValidationError):
        io.read_trajectory(path)


def test_run_config_validation(tmp_path):
    rc = io.RunConfig.from_dict({"fit": {"candidate_set": ["rigid", "revolute"]}, "structure_mode": "tree"})
    assert rc.fit.candidate_set == ("rigid", "revolute") and rc.fit.prune_gp
    assert io.RunConfig.from_dict(rc.to_dict()).to_dict() == rc.to_dict()
    for bad in ({"colour": 1}, {"fit": {"speed": 2}}, {"structure_mode": "greedy"}, {"noise": {"sigma_pos": "x"}}):
        with pytest.raises(ValidationError):
            io.RunConfig.from_dict(bad)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def run(*argv):
    return cli.main([str(a) for a in argv])


def _simulate(tmp_path, scenario, *extra, name="traj"):
    out, truth = tmp_path / f"{name}.jsonl", tmp_path / f"{name}.truth.json"
    assert run("simulate", scenario, "--out", out, "--truth", truth, *extra) == 0
    return out, truth


def test_simulate_writes_records_and_outliers(tmp_path):
    out, truth = _simulate(tmp_path, "microwave", "--n", 50, "--outlier-rate", 0.2, "--seed", 3)
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 50 * 2
    doc = json.loads(truth.read_text())
    assert 5 <= len(doc["outliers"]) <= 18
    assert all(part == 2 for _, part in doc["outliers"])
    assert len(doc["held_out_poses"]) == 200


def test_simulate_unknown_scenario(tmp_path, capsys):
    assert run("simulate", "spaceship", "--out", tmp_path / "x.jsonl") == 2
    assert "spaceship" in capsys.readouterr().err


def test_missing_input_file(tmp_path):
    assert run("fit-link", tmp_path / "nope.jsonl") == 2


def test_fit_link_table(tmp_path):
    out, truth = _simulate(tmp_path, "microwave", "--seed", 1)
    fit, table = tmp_path / "fit.json", tmp_path / "fit.csv"
    assert run("fit-link", out, "--out", fit, "--table", table, "--truth", truth) == 0
    rows = list(csv.DictReader(table.open()))
    assert [r["variant"] for r in rows] == ["rigid", "prismatic", "revolute", "gp"]
    doc = json.loads(fit.read_text())
    assert doc["selected"]["variant"] == "revolute"
    fitted = [r for r in rows if r["status"] == "fitted"]
    assert min(fitted, key=lambda r: float(r["bic"]))["variant"] == "revolute"
    assert float(rows[2]["pos_error"]) < 0.005
    assert all(r["reason"] for r in rows if r["status"] != "fitted")
    report = tmp_path / "err.json"
    assert run("eval", "error", "--model", fit, "--truth", truth, "--out", report) == 0
    assert json.loads(report.read_text())["rows"][0]["pos_error"] == pytest.approx(float(rows[2]["pos_error"]))


def test_single_sample_fits_rigid_only(tmp_path):
    out, _ = _simulate(tmp_path, "drawer", "--n", 1)
    fit = tmp_path / "fit.json"
    assert run("fit-link", out, "--out", fit) == 0
    doc = json.loads(fit.read_text())
    assert doc["selected"]["variant"] == "rigid"
    assert [r["status"] for r in doc["candidates"]] == ["fitted", "unfittable", "unfittable", "unfittable"]


def test_fit_link_bad_pair(tmp_path):
    out, _ = _simulate(tmp_path, "drawer")
    assert run("fit-link", out, "--pair", 1, 3) == 2
    assert run("fit-link", out, "--candidates", "screw") == 2


def test_learn_structure_tree_mode(tmp_path):
    out, truth = _simulate(tmp_path, "yardstick-closed", "--n", 30)
    g = tmp_path / "g.json"
    assert run("learn-structure", out, "--structure-mode", "tree", "--out", g, "--truth", truth) == 0
    doc = json.loads(g.read_text())
    assert len(doc["selected_edges"]) == 3
    back = io.graph_from_dict(doc)
    assert back.selected_edges == tuple(tuple(e) for e in doc["selected_edges"])


def test_prior_cli(tmp_path, capsys):
    trajs = []
    for i in range(2):
        out, truth = _simulate(tmp_path, "door-a", "--seed", i, name=f"door{i}")
        trajs.append((out, truth))
    empty = tmp_path / "empty.json"
    assert run("prior", "learn", trajs[0][0], "--db", empty) == 0
    db = io.db_from_dict(io.read_json(empty))
    assert len(db) == 1 and db.entries[0].provenance == ("door0",)
    pred = tmp_path / "pred.json"
    assert run("prior", "predict", trajs[1][0], "--db", empty, "--truth", trajs[1][1], "--out", pred) == 0
    doc = json.loads(pred.read_text())
    assert doc["source"] == "prior" and doc["error_ratio"] > 0
    assert run("prior", "predict", trajs[1][0], "--db", tmp_path / "none.json") == 2
    blank = tmp_path / "blank.json"
    blank.write_text(io.dumps(io.db_to_dict(PriorDatabase())))
    assert run("prior", "predict", trajs[1][0], "--db", blank, "--out", pred) == 0
    assert json.loads(pred.read_text())["source"] == "fresh"


def test_db_digest_detects_tampering(tmp_path):
    out, _ = _simulate(tmp_path, "door-a")
    db = tmp_path / "db.json"
    assert run("prior", "learn", out, "--db", db) == 0
    doc = json.loads(db.read_text())
    doc["entries"][0]["positions"][0][0] += 1.0
    db.write_text(json.dumps(doc))
    assert run("prior", "predict", out, "--db", db) == 2


def test_empty_trajectory_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert run("learn-structure", p) == 2


def test_config_file_and_unknown_key(tmp_path):
    out, _ = _simulate(tmp_path, "drawer")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"fit": {"candidate_set": ["rigid", "prismatic"]}}))
    fit = tmp_path / "f.json"
    assert run("fit-link", out, "--config", cfg, "--out", fit) == 0
    assert [r["variant"] for r in json.loads(fit.read_text())["candidates"]] == ["rigid", "prismatic"]
    cfg.write_text(json.dumps({"fitting": {}}))
    assert run("fit-link", out, "--config", cfg) == 2


def test_eval_sweep_and_dof_curve(tmp_path):
    out, _ = _simulate(tmp_path, "microwave")
    sweep = tmp_path / "s.json"
    assert run("eval", "sweep", out, "--sigmas", "0.002,0.5", "--out", sweep) == 0
    rows = json.loads(sweep.read_text())["rows"]
    assert [r["selected"] for r in rows][-1] == "rigid"
    curve = tmp_path / "d.json"
    assert run("eval", "dof-curve", out, "--prefixes", "5,20", "--out", curve) == 0
    assert [r["n"] for r in json.loads(curve.read_text())["rows"]] == [5, 20]
    assert run("eval", "dof-curve", out, "--prefixes", "0") == 2


def test_reruns_are_byte_identical(tmp_path):
    out, _ = _simulate(tmp_path, "cabinet", "--n", 20)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("learn-structure", out, "--out", a, "--seed", 5) == 0
    assert run("learn-structure", out, "--out", b, "--seed", 5) == 0
    assert a.read_bytes() == b.read_bytes()
