"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one ``criterion N: PASS|FAIL ...`` line; the lines are
printed together at the end of the run (see conftest.py).
"""
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from artikin import cli
from artikin.estimation import FitConfig, fit_all_candidates, noise_sweep, select_model
from artikin.models import PrismaticModel, RevoluteModel, jacobian, train_gp_model
from artikin.obs_model import NoiseSpec
from artikin.prior import learn, predict_with_prior, remove_trajectory
from artikin.se3 import Pose, compose_arr, random_pose, unstack
from artikin.simulator import (
    ObjectTrajectory,
    ScenarioSpec,
    evaluate_graph,
    evaluate_link,
    generate,
    held_out,
    link_error,
    prior_mechanism,
    prior_suite,
    random_four_bar,
    scenario_names,
)
from artikin.structure import (
    GraphEvaluator,
    exhaustive_search,
    fit_all_edges,
    heuristic_search,
    is_tree,
    learn_structure,
    spanning_tree,
)

REPORT: dict[int, str] = {}
GOLDEN = Path(__file__).parent / "golden" / "simulate.json"


def record(n: int, ok: bool, detail: str) -> None:
    REPORT[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(REPORT[n])
    assert ok, REPORT[n]


def cfg(seed=0):
    # the shipped CLI default: GP pruning on
    return FitConfig(rng_seed=seed, prune_gp=True)


def _link_runs(name, seeds=range(10), **kw):
    rows = []
    for seed in seeds:
        spec = ScenarioSpec(name, seed=seed)
        traj, _ = generate(spec)
        noise = spec.mechanism().assumed_noise
        t0 = time.perf_counter()
        fits = fit_all_candidates(traj.pair(1, 2), noise, cfg(seed))
        best = select_model(fits)
        dt = time.perf_counter() - t0
        truth = held_out(spec)
        errs = {f.variant: evaluate_link(f.model, truth, noise=noise) for f in fits}
        rows.append((best, fits, errs, dt))
    return rows


def test_criterion_1_microwave():
    rows = _link_runs("microwave")
    hits = sum(b.variant == "revolute" for b, *_ in rows)
    pe = max(e["revolute"]["pos_error"] for _, _, e, _ in rows)
    ae = math.degrees(max(e["revolute"]["ang_error"] for _, _, e, _ in rows))
    slow = max(dt for *_, dt in rows)
    ok = hits >= 9 and pe <= 0.005 and ae <= 1.0 and slow < 2.0
    record(1, ok, f"revolute {hits}/10, worst pos {pe:.4f} m, worst ang {ae:.3f} deg, slowest {slow:.2f} s")


def test_criterion_2_drawer():
    rows = _link_runs("drawer")
    hits = sum(b.variant == "prismatic" for b, *_ in rows)
    pe = max(e["prismatic"]["pos_error"] for _, _, e, _ in rows)
    # forced revolute: fitted on its own, judged as a fit
    rev = max(e["revolute"]["pos_error"] for _, _, e, _ in rows)
    ok = hits >= 9 and pe <= 0.005 and rev <= 0.01
    record(2, ok, f"prismatic {hits}/10, worst pos {pe:.4f} m, forced revolute worst {rev:.4f} m")


def test_criterion_3_garage():
    (best, fits, errs, _), = _link_runs("garage", seeds=[0])
    gp = errs["gp"]["pos_error"] if "gp" in errs else math.inf
    para = {v: e["pos_error"] for v, e in errs.items() if v != "gp"}
    ok = best.variant == "gp" and gp <= 0.10 and all(v > 0.20 for v in para.values())
    detail = ", ".join(f"{v} {e:.3f}" for v, e in para.items())
    record(3, ok, f"selected {best.variant}, gp pos {gp:.3f} m; parametric: {detail}")


def test_criterion_4_structure():
    want = {"cabinet": ([(1, 2), (1, 3)], {"prismatic"}, 2),
            "yardstick-open": ([(1, 2), (2, 3), (3, 4)], {"revolute"}, 3),
            "yardstick-closed": ([(1, 2), (1, 4), (2, 3), (3, 4)], {"revolute"}, 1)}
    tally = {}
    for name, (edges, variants, dof) in want.items():
        good = 0
        for seed in range(10):
            spec = ScenarioSpec(name, seed=seed)
            traj, truth = generate(spec)
            g = learn_structure(traj, spec.mechanism().assumed_noise, cfg(seed))
            ev = evaluate_graph(g, truth)
            good += (ev["selected_edges"] == [list(e) for e in edges] and g.dof_total == dof
                     and {g.edge_models[e].variant for e in g.selected_edges} == variants)
        tally[name] = good
    record(4, all(v == 10 for v in tally.values()), ", ".join(f"{k} {v}/10" for k, v in tally.items()))


def test_criterion_5_heuristic_search():
    not_worse = matches = 0
    gap_h, gap_t = [], []
    for seed in range(50):
        mech = random_four_bar(seed)
        traj, _ = generate(ScenarioSpec(mech.name, n=40, seed=seed, mech=mech))
        selected, _ = fit_all_edges(traj, mech.assumed_noise, cfg(seed))
        ev = GraphEvaluator(traj, selected, mech.assumed_noise)
        tree = spanning_tree(selected)
        h = heuristic_search(ev, tree)
        x = exhaustive_search(ev)
        bt, bh, bx = ev.evaluate(tree)[0], ev.evaluate(h)[0], ev.evaluate(x)[0]
        not_worse += bh <= bt
        matches += bh <= bx
        gap_h.append((bh - bx) / abs(bx))
        gap_t.append((bt - bx) / abs(bx))
    ok = not_worse == 50 and matches >= 20 and np.mean(gap_h) <= np.mean(gap_t)
    record(5, ok, f"heuristic<=tree {not_worse}/50, matches exhaustive {matches}/50, "
                  f"mean gap heuristic {100 * np.mean(gap_h):.2f}% vs tree {100 * np.mean(gap_t):.2f}%")


def _transitions_ok(sel):
    order = {"gp": 0, "revolute": 1, "prismatic": 1, "rigid": 2}
    ranks = [order[s] for s in sel]
    return all(b >= a for a, b in zip(ranks, ranks[1:])) and len({(a, b) for a, b in zip(sel, sel[1:]) if a != b}) <= 2


def test_criterion_6_noise_sweep():
    traj, _ = generate(ScenarioSpec("noisy-revolute", seed=0))
    rows = noise_sweep(traj.pair(1, 2), cfg=cfg(0))
    sel = [r["selected"] for r in rows]
    band = [r["selected"] for r in rows if 0.02 <= r["sigma_pos"] <= 0.2]
    ok = _transitions_ok(sel) and all(s == "revolute" for s in band)
    record(6, ok, "selection by sigma: " + ", ".join(f"{r['sigma_pos']}:{r['selected']}" for r in rows))


def test_criterion_7_priors():
    suite = prior_suite(seed=0)
    noise = prior_mechanism("door-a").assumed_noise
    ids = [f"{name}#{k}" for k, (name, _, _) in enumerate(suite)]
    db = learn([traj.pair(1, 2) for _, traj, _ in suite], noise, cfg(1), ids)
    groups = sorted(sorted(e.provenance) for e in db.entries)
    want = sorted(sorted(i for i in ids if i.startswith(name + "#")) for name in {n for n, _, _ in suite})
    partition = groups == want
    prior_err, fresh_err = [], []
    for k, (_, traj, truth) in enumerate(suite):
        loo = remove_trajectory(db, ids[k], noise, cfg(1))
        p, q = traj.pair(1, 2)
        m = len(p) // 2
        pred = predict_with_prior(loo, (p[:m], q[:m]), noise, cfg(1))
        tp, tq = truth.pair(1, 2)
        prior_err.append(link_error(pred.fit.model, tp, tq, noise).pos_error)
        fresh_err.append(link_error(pred.fresh.model, tp, tq, noise).pos_error)
    ratio = np.mean(fresh_err) / np.mean(prior_err)
    ok = len(db) == 5 and partition and ratio >= 1.5
    record(7, ok, f"{len(db)} entries, partition {'ok' if partition else 'wrong'}, "
                  f"LOO fresh/prior error ratio {ratio:.2f} (prior {np.mean(prior_err):.3f} m, "
                  f"fresh {np.mean(fresh_err):.3f} m)")


def _brute_tree(costs, p):
    import itertools
    subs = (s for s in itertools.combinations(sorted(costs), p - 1) if is_tree(s, p))
    return min(sum(costs[e] for e in s) for s in subs)


def test_criterion_8_spanning_tree():
    rng = np.random.default_rng(8)
    agree = 0
    for _ in range(200):
        p = int(rng.integers(2, 6))
        costs = {(i, j): float(rng.normal(scale=50)) for i in range(1, p + 1) for j in range(i + 1, p + 1)}
        tree = spanning_tree(costs)
        agree += is_tree(tree, p) and math.isclose(sum(costs[e] for e in tree), _brute_tree(costs, p),
                                                   rel_tol=1e-12, abs_tol=1e-9)
    sizes = [4, 8, 16, 32]
    times = []
    for p in sizes:
        costs = {(i, j): float(rng.random()) for i in range(1, p + 1) for j in range(i + 1, p + 1)}
        best = math.inf
        for _ in range(7):
            t0 = time.perf_counter()
            for _ in range(20):
                spanning_tree(costs)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    slope = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    record(8, agree == 200 and slope < 3.0, f"brute-force agreement {agree}/200, runtime log-log slope {slope:.2f}")


def _fd_oracle(model, q, h=1e-6):
    """Central differences of 4x4 transforms built with scipy; body-frame rotation rate."""
    def mat(x):
        p, o = model.forward_arr(np.atleast_2d(x))
        w, a, b, c = o[0]
        return p[0], Rotation.from_quat([a, b, c, w]).as_matrix()
    p0, r0 = mat(q)
    cols = []
    for k in range(len(q)):
        e = np.zeros(len(q))
        e[k] = h
        pp, rp = mat(q + e)
        pm, rm = mat(q - e)
        dr = r0.T @ (rp - rm) / (2 * h)
        cols.append(np.concatenate([(pp - pm) / (2 * h), [dr[2, 1], dr[0, 2], dr[1, 0]]]))
    return np.array(cols).T


def test_criterion_9_numerical_properties():
    rng = np.random.default_rng(9)
    worst_jac = worst_rt = worst_rot = 0.0
    for k in range(100):
        kind = ("prismatic", "revolute", "gp")[k % 3]
        c = random_pose(rng)
        if kind == "prismatic":
            m = PrismaticModel(c, rng.normal(size=3))
        elif kind == "revolute":
            m = RevoluteModel(c, Pose.from_rotvec(rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)))
        else:
            base = RevoluteModel(c, Pose.translation(rng.uniform(0.2, 1.0)))
            m = train_gp_model(unstack(*base.forward_arr(np.linspace(0, 1.5, 12)[:, None])), 1,
                               NoiseSpec(0.01, 0.05))
        q = rng.uniform(-1.0, 1.0, m.dof) if kind != "gp" else rng.uniform(-0.5, 0.5, 1)
        j, o = jacobian(m, q), _fd_oracle(m, q)
        worst_jac = max(worst_jac, np.linalg.norm(j - o) / max(np.linalg.norm(o), 1e-12))
        if kind != "gp":
            back = m.inverse_arr(*m.forward_arr(q[None, :]))[0]
            worst_rt = max(worst_rt, float(np.abs(back - q).max()))
    gm = train_gp_model(unstack(*RevoluteModel(Pose.identity(), Pose.translation(0.4)).forward_arr(
        np.linspace(-1, 1, 15)[:, None])), 1, NoiseSpec(0.01, 0.05))
    _, ori = gm.forward_arr(rng.uniform(-5, 5, (1000, 1)))
    for o in ori:
        r = Pose(np.zeros(3), o).rotation()
        worst_rot = max(worst_rot, np.abs(r @ r.T - np.eye(3)).max(), abs(np.linalg.det(r) - 1.0))
    # gauge: a rigid world transform applied to every part leaves the selection unchanged
    spec = ScenarioSpec("cabinet", seed=4)
    traj, _ = generate(spec)
    noise = spec.mechanism().assumed_noise
    ref = learn_structure(traj, noise, cfg(4))
    sig = lambda g: (g.selected_edges, tuple(g.edge_models[e].variant for e in g.selected_edges), g.dof_total)
    gauge = 0
    for _ in range(20):
        w = random_pose(rng, scale=3.0)
        p, q = compose_arr(w.position, w.orientation, traj.positions, traj.orientations)
        gauge += sig(learn_structure(ObjectTrajectory(p, q), noise, cfg(4))) == sig(ref)
    ok = worst_jac < 1e-3 and worst_rt < 1e-6 and worst_rot < 1e-9 and gauge == 20
    record(9, ok, f"jacobian rel err {worst_jac:.1e}, roundtrip {worst_rt:.1e}, "
                  f"gp rotation {worst_rot:.1e}, gauge {gauge}/20")


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run_twice(tmp, tag, argv, outs):
    digests = []
    for rep in ("a", "b"):
        args = [a.replace("{rep}", rep) if isinstance(a, str) else str(a) for a in argv]
        code = cli.main([str(a) for a in args])
        assert code in (0, 4), (tag, code)
        digests.append(tuple(_sha(tmp / o.replace("{rep}", rep)) for o in outs))
    return digests[0] == digests[1]


def test_criterion_10_cli_determinism(tmp_path):
    golden = json.loads(GOLDEN.read_text())
    mismatched, unstable = [], []
    names = sorted(scenario_names())
    for name in names:
        t = str(tmp_path / f"{name}.{{rep}}.jsonl")
        tr = str(tmp_path / f"{name}.{{rep}}.truth.json")
        if not _run_twice(tmp_path, name, ["simulate", name, "--seed", "7", "--outlier-rate", "0.1",
                                           "--out", t, "--truth", tr],
                          [f"{name}.{{rep}}.jsonl", f"{name}.{{rep}}.truth.json"]):
            unstable.append(f"simulate {name}")
        got = [_sha(tmp_path / f"{name}.a.jsonl"), _sha(tmp_path / f"{name}.a.truth.json")]
        if golden.get(name) != got:
            mismatched.append(name)
        traj = str(tmp_path / f"{name}.a.jsonl")
        p = json.loads(Path(traj).read_text().splitlines()[0])["p"]
        if p == 2:
            cmd = ["fit-link", traj, "--out", str(tmp_path / f"{name}.fit.{{rep}}.json"),
                   "--table", str(tmp_path / f"{name}.fit.{{rep}}.csv")]
            outs = [f"{name}.fit.{{rep}}.json", f"{name}.fit.{{rep}}.csv"]
        else:
            cmd = ["learn-structure", traj, "--out", str(tmp_path / f"{name}.g.{{rep}}.json")]
            outs = [f"{name}.g.{{rep}}.json"]
        if not _run_twice(tmp_path, name, cmd, outs):
            unstable.append(f"{cmd[0]} {name}")
    door = [str(tmp_path / f"door-{k}.jsonl") for k in ("a", "b")]
    for k, path in zip((1, 2), door):
        assert cli.main(["simulate", "door-a", "--seed", str(k), "--out", path]) == 0
    extra = {
        "prior learn": (["prior", "learn", door[0], "--db", str(tmp_path / "db.{rep}.json")], ["db.{rep}.json"]),
        "prior predict": (["prior", "predict", door[1], "--db", str(tmp_path / "db.a.json"),
                           "--out", str(tmp_path / "pred.{rep}.json")], ["pred.{rep}.json"]),
        "eval sweep": (["eval", "sweep", door[1], "--sigmas", "0.01,0.1", "--out", str(tmp_path / "sw.{rep}.json")],
                       ["sw.{rep}.json"]),
        "eval dof-curve": (["eval", "dof-curve", str(tmp_path / "cabinet.a.jsonl"), "--prefixes", "20,60",
                            "--out", str(tmp_path / "dc.{rep}.json")], ["dc.{rep}.json"]),
        "eval error": (["eval", "error", "--model", str(tmp_path / "microwave.fit.a.json"), "--truth",
                        str(tmp_path / "microwave.a.truth.json"), "--out", str(tmp_path / "err.{rep}.json")],
                       ["err.{rep}.json"]),
    }
    for tag, (cmd, outs) in extra.items():
        if not _run_twice(tmp_path, tag, cmd, outs):
            unstable.append(tag)
    ok = not mismatched and not unstable
    record(10, ok, f"{len(names)} scenarios; golden mismatches {mismatched or 'none'}; "
                   f"non-identical reruns {unstable or 'none'}")
