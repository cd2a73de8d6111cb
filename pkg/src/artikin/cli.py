"""Command-line interface: simulate, fit-link, learn-structure, prior, eval.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 non-convergence
(outputs are still written).
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import ArtikinError, ValidationError
from .estimation import SWEEP_SIGMAS, fit_all_candidates, noise_sweep, select_model
from .models import VARIANTS
from .obs_model import NoiseSpec
from .prior import PriorDatabase, assimilate, predict_with_prior
from .simulator import ScenarioSpec, evaluate_graph, generate, held_out, link_error, mechanism, scenario_names
from .structure import learn_structure

log = logging.getLogger("artikin")


# ---------------------------------------------------------------------------
# shared option handling
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", help="run configuration JSON")
    g.add_argument("--sigma-pos", type=float, help="assumed positional noise (m)")
    g.add_argument("--sigma-orient", type=float, help="assumed orientation noise (rad)")
    g.add_argument("--outlier-w", type=float, help="Beta prior weight on the outlier ratio")
    g.add_argument("--seed", type=int, help="MLESAC random seed")
    g.add_argument("--candidates", help="comma-separated subset of " + ",".join(VARIANTS))
    g.add_argument("--structure-mode", choices=io.STRUCTURE_MODES)
    g.add_argument("--latent-dims", help="comma-separated GP latent dimensions, e.g. 1,2")


def _run_config(args, header: dict | None = None) -> tuple[io.RunConfig, NoiseSpec]:
    rc = io.RunConfig.load(args.config) if getattr(args, "config", None) else io.RunConfig()
    noise = rc.noise
    if noise is None and header and "noise" in header:
        noise = io.noise_from_dict(header["noise"], "trajectory header noise")
    noise = noise or NoiseSpec()
    if args.sigma_pos is not None or args.sigma_orient is not None:
        noise = replace(noise,
                        sigma_pos=noise.sigma_pos if args.sigma_pos is None else args.sigma_pos,
                        sigma_orient=noise.sigma_orient if args.sigma_orient is None else args.sigma_orient)
    if args.outlier_w is not None:
        rc.outlier = replace(rc.outlier, w=args.outlier_w)
    fit = rc.fit
    if args.seed is not None:
        fit = replace(fit, rng_seed=args.seed)
    if args.candidates:
        fit = replace(fit, candidate_set=tuple(c.strip() for c in args.candidates.split(",") if c.strip()))
    if args.latent_dims:
        try:
            dims = tuple(int(x) for x in args.latent_dims.split(","))
        except ValueError:
            raise ValidationError("--latent-dims must be comma-separated integers") from None
        fit = replace(fit, latent_dims=dims)
    rc.fit = fit
    if args.structure_mode:
        rc.structure_mode = args.structure_mode
    rc.noise = noise
    return rc, noise


def _pair(traj, pair):
    i, j = pair
    if not (1 <= i <= traj.p and 1 <= j <= traj.p) or i == j:
        raise ValidationError(f"--pair {i} {j} is not a pair of distinct parts in 1..{traj.p}")
    return traj.pair(i, j)


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return "" if v is None else str(v)


def _emit(doc, out: str | None) -> None:
    text = io.dumps(doc)
    if out:
        io.write_text(out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    mech = mechanism(args.scenario)
    noise = mech.noise
    if args.sigma_pos is not None or args.sigma_orient is not None:
        noise = replace(noise,
                        sigma_pos=noise.sigma_pos if args.sigma_pos is None else args.sigma_pos,
                        sigma_orient=noise.sigma_orient if args.sigma_orient is None else args.sigma_orient)
    spec = ScenarioSpec(args.scenario, n=args.n, noise=noise, outlier_rate=args.outlier_rate,
                        seed=args.seed, noise_free=args.noise_free, mech=mech)
    traj, truth = generate(spec)
    io.write_trajectory(args.out, traj, noise_hint=mech.assumed_noise, scenario=args.scenario)
    if args.truth:
        held = held_out(spec, args.held_out)
        _emit(io.truth_to_dict(truth, noise, args.outlier_rate, args.seed, held), args.truth)
    print(f"{args.scenario}: n={traj.n} p={traj.p} outliers={int(truth.outliers.sum())}")
    return 0


def _candidate_errors(fits, truth_doc, pair, noise):
    if truth_doc is None:
        return {}
    ev = io.held_out_trajectory(truth_doc)
    p, q = _pair(ev, pair)
    out = {}
    for f in fits:
        rep = link_error(f.model, p, q, noise)
        out[f.variant] = {"pos_error": rep.pos_error, "ang_error": rep.ang_error}
    return out


def cmd_fit_link(args) -> int:
    traj, header = io.read_trajectory(args.trajectory)
    rc, noise = _run_config(args, header)
    data = _pair(traj, args.pair)
    fits = fit_all_candidates(data, noise, rc.fit, rc.outlier)
    best = select_model(fits)
    truth_doc = io.read_json(args.truth) if args.truth else None
    errs = _candidate_errors(fits, truth_doc, args.pair, noise)
    rows = io.candidate_rows(fits, errs)
    doc = {"format": "artikin-fit", "version": io.FORMAT_VERSION, "pair": list(args.pair),
           "selected": io.fit_to_dict(best), "candidates": rows,
           "unfittable": dict(sorted(fits.unfittable.items())), "config": rc.to_dict(),
           "noise": io.noise_to_dict(noise)}
    _emit(doc, args.out)
    if args.table:
        io.write_text(args.table, _csv(rows, ["variant", "status", "k", "d", "log_lik", "bic", "gamma_hat",
                                              "pos_error", "ang_error", "reason"]))
    print(f"selected {best.variant} (bic {best.bic:.3f}, gamma {best.gamma_hat:.3f})")
    return 0


def cmd_learn_structure(args) -> int:
    traj, header = io.read_trajectory(args.trajectory)
    rc, noise = _run_config(args, header)
    g = learn_structure(traj, noise, rc.fit, mode=rc.structure_mode,
                        estimate_dof=rc.estimate_dof and not args.no_dof, noise_y=rc.noise_y)
    doc = io.graph_to_dict(g)
    if args.truth:
        doc["evaluation"] = evaluate_graph(g, io.truth_from_dict(io.read_json(args.truth)))
    _emit(doc, args.out)
    edges = " ".join(f"{i}-{j}:{g.edge_models[(i, j)].variant}" for i, j in g.selected_edges)
    print(f"edges {edges}; D={g.dof_total}; bic {g.bic:.3f}")
    if not g.converged:
        log.warning("pose-graph optimisation did not converge; outputs written")
        return 4
    return 0


def _load_db(path) -> PriorDatabase:
    if path and Path(path).exists():
        return io.db_from_dict(io.read_json(path))
    return PriorDatabase()


def cmd_prior_learn(args) -> int:
    db = _load_db(args.db)
    rc = None
    for path in args.trajectories:
        traj, header = io.read_trajectory(path)
        if rc is None:
            rc, noise = _run_config(args, header)
        tid = Path(path).stem
        assimilate(db, _pair(traj, args.pair), noise, rc.fit, traj_id=tid, outlier=rc.outlier)
        h = db.history[-1]
        print(f"{tid}: {h['action']} -> entry {h['entry']} (delta bic {h['delta_bic']:.3f})")
    _emit(io.db_to_dict(db), args.db)
    print(f"{len(db)} entries")
    return 0


def cmd_prior_predict(args) -> int:
    if not Path(args.db).exists():
        raise ValidationError(f"prior database not found: {args.db}")
    db = _load_db(args.db)
    traj, header = io.read_trajectory(args.trajectory)
    rc, noise = _run_config(args, header)
    if not 0.0 < args.fraction <= 1.0:
        raise ValidationError("--fraction must lie in (0, 1]")
    p, q = _pair(traj, args.pair)
    m = max(1, int(round(args.fraction * len(p))))
    pred = predict_with_prior(db, (p[:m], q[:m]), noise, rc.fit, rc.outlier)
    doc = {"format": "artikin-prediction", "version": io.FORMAT_VERSION, "observed": m, "n": len(p),
           "source": pred.source, "entry": pred.entry, "delta_bic": pred.delta_bic,
           "prediction": io.fit_to_dict(pred.fit), "fresh": io.fit_to_dict(pred.fresh)}
    if args.truth:
        ev = io.held_out_trajectory(io.read_json(args.truth))
        hp, hq = _pair(ev, args.pair)
        e_pred = link_error(pred.fit.model, hp, hq, noise)
        e_fresh = link_error(pred.fresh.model, hp, hq, noise)
        doc["pos_error"] = e_pred.pos_error
        doc["fresh_pos_error"] = e_fresh.pos_error
        doc["error_ratio"] = e_fresh.pos_error / max(e_pred.pos_error, 1e-300)
    _emit(doc, args.out)
    print(f"source {pred.source}" + (f" (entry {pred.entry})" if pred.entry is not None else ""))
    return 0


def cmd_eval(args) -> int:
    mode = args.mode
    if mode == "error":
        if not args.truth or not (args.model or args.graph):
            raise ValidationError("eval error needs --truth and one of --model/--graph")
        truth_doc = io.read_json(args.truth)
        ev = io.held_out_trajectory(truth_doc)
        noise = NoiseSpec(**truth_doc["noise"]) if "noise" in truth_doc else None
        rows = []
        if args.model:
            doc = io.read_json(args.model)
            fit = doc.get("selected", doc)
            model = io.model_from_dict(fit["model"] if "model" in fit else fit)
            i, j = doc.get("pair", args.pair)
            rep = link_error(model, *_pair(ev, (i, j)), noise)
            rows.append({"i": i, "j": j, "variant": model.variant, **rep.to_dict()})
        else:
            g = io.graph_from_dict(io.read_json(args.graph))
            for (i, j) in g.selected_edges:
                rep = link_error(g.edge_models[(i, j)].model, *_pair(ev, (i, j)), noise)
                rows.append({"i": i, "j": j, "variant": g.edge_models[(i, j)].variant, **rep.to_dict()})
        cols = ["i", "j", "variant", "pos_error", "ang_error", "n"]
    elif mode == "sweep":
        traj, header = io.read_trajectory(args.trajectory)
        rc, noise = _run_config(args, header)
        sigmas = tuple(float(s) for s in args.sigmas.split(",")) if args.sigmas else SWEEP_SIGMAS
        rows = noise_sweep(_pair(traj, args.pair), sigmas, rc.fit, args.orient_per_pos,
                           noise.workspace_diameter, rc.outlier)
        for r in rows:
            for v, b in r.pop("bic").items():
                r[f"bic_{v}"] = b
        cols = ["sigma_pos", "sigma_orient"] + [f"bic_{v}" for v in rc.fit.candidate_set] + ["selected"]
    else:
        traj, header = io.read_trajectory(args.trajectory)
        rc, noise = _run_config(args, header)
        if args.prefixes:
            prefixes = [int(x) for x in args.prefixes.split(",")]
        else:
            prefixes = sorted({max(4, int(round(traj.n * f))) for f in (0.2, 0.4, 0.6, 0.8, 1.0)})
        if any(m < 1 or m > traj.n for m in prefixes):
            raise ValidationError(f"prefix lengths must lie in 1..{traj.n}")
        rows = []
        for m in prefixes:
            g = learn_structure(traj.prefix(m), noise, rc.fit, mode=rc.structure_mode, noise_y=rc.noise_y)
            rows.append({"n": m, "dof": g.dof_total, "dof_links": g.dof_links, "bic": g.bic,
                         "edges": [f"{i}-{j}:{g.edge_models[(i, j)].variant}" for i, j in g.selected_edges]})
        cols = ["n", "dof", "dof_links", "bic", "edges"]
    _emit({"format": "artikin-eval", "mode": mode, "rows": rows}, args.out)
    if args.csv:
        io.write_text(args.csv, _csv(rows, cols))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artikin", description="Learn kinematic models of articulated objects.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a scenario trajectory and its ground truth")
    s.add_argument("scenario", help="one of: " + ", ".join(scenario_names()) + ", four-bar-<seed>")
    s.add_argument("--n", type=int, help="number of timesteps")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--outlier-rate", type=float, default=0.0)
    s.add_argument("--sigma-pos", type=float, help="true positional noise (m)")
    s.add_argument("--sigma-orient", type=float, help="true orientation noise (rad)")
    s.add_argument("--noise-free", action="store_true")
    s.add_argument("--held-out", type=int, default=200, help="held-out evaluation poses in the truth file")
    s.add_argument("--out", required=True, help="trajectory file")
    s.add_argument("--truth", help="ground-truth sidecar file")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit-link", help="fit and select a model for one pair of parts")
    f.add_argument("trajectory")
    f.add_argument("--pair", type=int, nargs=2, default=(1, 2), metavar=("I", "J"))
    f.add_argument("--out", help="fit file (stdout if omitted)")
    f.add_argument("--table", help="per-candidate CSV table")
    f.add_argument("--truth", help="ground truth for per-candidate errors")
    _common(f)
    f.set_defaults(func=cmd_fit_link)

    g = sub.add_parser("learn-structure", help="learn the kinematic graph of an object")
    g.add_argument("trajectory")
    g.add_argument("--out", help="graph file (stdout if omitted)")
    g.add_argument("--truth", help="ground truth for structure evaluation")
    g.add_argument("--no-dof", action="store_true", help="skip DOF estimation")
    _common(g)
    g.set_defaults(func=cmd_learn_structure)

    pr = sub.add_parser("prior", help="prior database of link models")
    psub = pr.add_subparsers(dest="prior_command", required=True)
    pl = psub.add_parser("learn", help="assimilate trajectories into a database")
    pl.add_argument("trajectories", nargs="+")
    pl.add_argument("--db", required=True)
    pl.add_argument("--pair", type=int, nargs=2, default=(1, 2), metavar=("I", "J"))
    _common(pl)
    pl.set_defaults(func=cmd_prior_learn)
    pp = psub.add_parser("predict", help="predict a link model from a partial trajectory")
    pp.add_argument("trajectory")
    pp.add_argument("--db", required=True)
    pp.add_argument("--pair", type=int, nargs=2, default=(1, 2), metavar=("I", "J"))
    pp.add_argument("--fraction", type=float, default=0.5, help="observed prefix fraction")
    pp.add_argument("--truth", help="ground truth for prior-vs-fresh errors")
    pp.add_argument("--out")
    _common(pp)
    pp.set_defaults(func=cmd_prior_predict)

    e = sub.add_parser("eval", help="error reports, noise sweeps and DOF curves")
    e.add_argument("mode", choices=("error", "sweep", "dof-curve"))
    e.add_argument("trajectory", nargs="?", help="trajectory file (sweep, dof-curve)")
    e.add_argument("--model", help="fit or model file (error)")
    e.add_argument("--graph", help="graph file (error)")
    e.add_argument("--truth", help="ground truth file (error)")
    e.add_argument("--pair", type=int, nargs=2, default=(1, 2), metavar=("I", "J"))
    e.add_argument("--sigmas", help="comma-separated assumed sigma_pos grid (sweep)")
    e.add_argument("--orient-per-pos", type=float, default=1.0,
                   help="assumed sigma_orient per unit sigma_pos, rad/m (sweep)")
    e.add_argument("--prefixes", help="comma-separated prefix lengths (dof-curve)")
    e.add_argument("--out", help="JSON report (stdout if omitted)")
    e.add_argument("--csv", help="CSV rows")
    _common(e)
    e.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and args.mode != "error" and not args.trajectory:
        ap.error(f"eval {args.mode} needs a trajectory file")
    try:
        return args.func(args)
    except ArtikinError as exc:
        print(f"artikin: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"artikin: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
