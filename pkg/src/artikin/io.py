"""Structured-text file formats (JSON, sorted keys, round-trip float rendering).

Trajectories are JSON lines: a header record followed by one record per
(timestep, part). Every other artifact is a single JSON document.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .estimation import FitConfig, FitList, FitResult
from .gp import GpParams
from .models import VARIANTS, GpModel, LinkModel, PrismaticModel, RevoluteModel, RigidModel
from .obs_model import NoiseSpec, OutlierSpec
from .prior import PriorDatabase, PriorEntry
from .se3 import Pose
from .simulator import GroundTruth, ObjectTrajectory
from .structure import KinematicGraph

TRAJ_FORMAT = "artikin-trajectory"
FORMAT_VERSION = 1


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(_plain(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if not math.isfinite(v):
            return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
        return v
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from None


def _pose7(v, where: str) -> np.ndarray:
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: pose must be 7 numbers") from None
    if a.shape != (7,) or not np.all(np.isfinite(a)):
        raise ValidationError(f"{where}: pose must be 7 finite numbers")
    if np.linalg.norm(a[3:]) < 1e-12:
        raise ValidationError(f"{where}: zero quaternion")
    return a


def _check_keys(d: dict, allowed, where: str, required=()):
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: expected an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ValidationError(f"{where}: unknown keys {extra}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ValidationError(f"{where}: missing keys {missing}")


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def noise_to_dict(n: NoiseSpec) -> dict:
    return {"sigma_pos": n.sigma_pos, "sigma_orient": n.sigma_orient, "workspace_diameter": n.workspace_diameter}


def noise_from_dict(d: dict, where="noise") -> NoiseSpec:
    _check_keys(d, ("sigma_pos", "sigma_orient", "workspace_diameter"), where)
    try:
        return NoiseSpec(**{k: float(v) for k, v in d.items()})
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from None


def trajectory_text(traj: ObjectTrajectory, noise_hint: NoiseSpec | None = None, scenario: str | None = None) -> str:
    header = {"format": TRAJ_FORMAT, "version": FORMAT_VERSION, "n": traj.n, "p": traj.p,
              "units": {"position": "m", "orientation": "unit quaternion (w, x, y, z)"}}
    if noise_hint is not None:
        header["noise"] = noise_to_dict(noise_hint)
    if scenario is not None:
        header["scenario"] = scenario
    lines = [json.dumps(_plain(header), sort_keys=True)]
    for t in range(traj.n):
        for i in range(traj.p):
            pose = list(traj.positions[t, i]) + list(traj.orientations[t, i])
            lines.append(json.dumps(_plain({"t": t + 1, "part": i + 1, "pose": pose}), sort_keys=True))
    return "\n".join(lines) + "\n"


def write_trajectory(path, traj: ObjectTrajectory, noise_hint=None, scenario=None) -> None:
    write_text(path, trajectory_text(traj, noise_hint, scenario))


def read_trajectory(path) -> tuple[ObjectTrajectory, dict]:
    """Parse and validate a trajectory file; returns (trajectory, header)."""
    try:
        raw = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    rows = [r for r in raw if r.strip()]
    if not rows:
        raise ValidationError(f"{path}: empty trajectory file")
    try:
        header = json.loads(rows[0])
        recs = [json.loads(r) for r in rows[1:]]
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed record ({exc})") from None
    _check_keys(header, ("format", "version", "n", "p", "units", "noise", "scenario"), f"{path} header",
                required=("format", "n", "p"))
    if header["format"] != TRAJ_FORMAT:
        raise ValidationError(f"{path}: not a trajectory file")
    n, p = header["n"], header["p"]
    if not (isinstance(n, int) and isinstance(p, int)) or n < 1 or p < 1:
        raise ValidationError(f"{path}: header needs positive integer n and p")
    if len(recs) != n * p:
        raise ValidationError(f"{path}: expected {n * p} pose records, found {len(recs)}")
    pos = np.full((n, p, 3), np.nan)
    ori = np.full((n, p, 4), np.nan)
    seen = set()
    for k, r in enumerate(recs, start=2):
        _check_keys(r, ("t", "part", "pose"), f"{path}:{k}", required=("t", "part", "pose"))
        t, i = r["t"], r["part"]
        if not (isinstance(t, int) and isinstance(i, int)) or not (1 <= t <= n and 1 <= i <= p):
            raise ValidationError(f"{path}:{k}: timestep/part out of range")
        if (t, i) in seen:
            raise ValidationError(f"{path}:{k}: duplicate record for t={t}, part={i}")
        seen.add((t, i))
        a = _pose7(r["pose"], f"{path}:{k}")
        pos[t - 1, i - 1] = a[:3]
        ori[t - 1, i - 1] = a[3:] / np.linalg.norm(a[3:])
    traj = ObjectTrajectory(pos, ori)
    return traj, header


# ---------------------------------------------------------------------------
# ground truth sidecar
# ---------------------------------------------------------------------------

def truth_to_dict(truth: GroundTruth, noise: NoiseSpec, outlier_rate: float, seed: int,
                  held: GroundTruth | None = None) -> dict:
    t = truth.true
    out = {
        "format": "artikin-truth", "version": FORMAT_VERSION, "scenario": truth.scenario,
        "dof": truth.dof, "edges": [[a, b, v] for a, b, v in truth.edges],
        "schedule": truth.schedule, "seed": seed, "outlier_rate": outlier_rate,
        "noise": noise_to_dict(noise),
        "outliers": [[int(a) + 1, int(b) + 1] for a, b in zip(*np.nonzero(truth.outliers))],
        "true_poses": np.concatenate([t.positions, t.orientations], axis=-1),
    }
    if held is not None:
        h = held.true
        out["held_out_poses"] = np.concatenate([h.positions, h.orientations], axis=-1)
    return out


def held_out_trajectory(d: dict) -> ObjectTrajectory:
    """Noise-free evaluation poses from a truth record (held-out set when present)."""
    poses = np.asarray(d.get("held_out_poses", d["true_poses"]), dtype=float)
    return ObjectTrajectory(poses[..., :3], poses[..., 3:])


def truth_from_dict(d: dict) -> GroundTruth:
    if d.get("format") != "artikin-truth":
        raise ValidationError("not a ground-truth file")
    poses = np.asarray(d["true_poses"], dtype=float)
    if poses.ndim != 3 or poses.shape[2] != 7 or poses.shape[0] < 1:
        raise ValidationError("ground truth has no poses")
    traj = ObjectTrajectory(poses[..., :3], poses[..., 3:])
    outl = np.zeros(traj.positions.shape[:2], dtype=bool)
    for t, i in d.get("outliers", []):
        outl[t - 1, i - 1] = True
    edges = tuple((int(a), int(b), str(v)) for a, b, v in d["edges"])
    return GroundTruth(d["scenario"], traj, np.asarray(d["schedule"], dtype=float), edges, int(d["dof"]), outl)


# ---------------------------------------------------------------------------
# models and fits
# ---------------------------------------------------------------------------

def _range(m: LinkModel):
    return None if m.config_range is None else m.config_range


def model_to_dict(m: LinkModel) -> dict:
    out = {"format": "artikin-model", "variant": m.variant, "d": m.dof, "k": m.param_count,
           "config_range": _range(m)}
    if isinstance(m, RigidModel):
        out["params"] = {"offset": m.offset.to_list()}
    elif isinstance(m, PrismaticModel):
        out["params"] = {"origin": m.origin.to_list(), "axis": m.axis}
    elif isinstance(m, RevoluteModel):
        out["params"] = {"center": m.center.to_list(), "radial": m.radial.to_list()}
    elif isinstance(m, GpModel):
        g = m.params
        out["params"] = {"latent_dim": g.latent_dim, "mean": g.mean, "scale": g.scale, "axes": g.axes,
                         "signal_var": g.signal_var, "length_scales": g.length_scales,
                         "train_q": g.train_q, "train_y": g.train_y, "noise_var": g.noise_var}
        out["n"] = g.n
    else:  # pragma: no cover
        raise ValidationError(f"cannot serialize {type(m).__name__}")
    return out


def model_from_dict(d: dict) -> LinkModel:
    if not isinstance(d, dict) or d.get("variant") not in VARIANTS or "params" not in d:
        raise ValidationError("not a model record")
    pr = d["params"]
    cr = d.get("config_range")
    cr = None if cr is None else np.asarray(cr, dtype=float).reshape(-1, 2)
    v = d["variant"]
    try:
        if v == "rigid":
            return RigidModel(Pose.from_list(pr["offset"]), config_range=cr)
        if v == "prismatic":
            return PrismaticModel(Pose.from_list(pr["origin"]), np.asarray(pr["axis"], float), config_range=cr)
        if v == "revolute":
            return RevoluteModel(Pose.from_list(pr["center"]), Pose.from_list(pr["radial"]), config_range=cr)
        a = lambda k: np.asarray(pr[k], dtype=float)
        dim = int(pr["latent_dim"])
        g = GpParams(dim, a("mean"), a("scale"), a("axes").reshape(dim, 12), float(pr["signal_var"]),
                     a("length_scales"), a("train_q").reshape(-1, dim), a("train_y").reshape(-1, 12),
                     float(pr["noise_var"]))
        return GpModel(g, config_range=cr)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed {v} model: {exc}") from None


def fit_to_dict(f: FitResult) -> dict:
    return {"model": model_to_dict(f.model), "variant": f.variant, "gamma_hat": f.gamma_hat,
            "log_lik": f.log_lik, "bic": f.bic, "n": f.n, "k": f.k, "d": f.model.dof}


def fit_from_dict(d: dict) -> FitResult:
    try:
        return FitResult(model_from_dict(d["model"]), float(d["gamma_hat"]), float(d["log_lik"]),
                         float(d["bic"]), int(d["n"]))
    except KeyError as exc:
        raise ValidationError(f"malformed fit record: missing {exc}") from None


def candidate_rows(fits: FitList, errors: dict | None = None) -> list[dict]:
    """One row per candidate variant, fitted or not, in the fixed variant order."""
    by_variant = {f.variant: f for f in fits}
    skipped = getattr(fits, "unfittable", {})
    rows = []
    for v in VARIANTS:
        if v in by_variant:
            f = by_variant[v]
            row = {"variant": v, "status": "fitted", "k": f.k, "d": f.model.dof, "log_lik": f.log_lik,
                   "bic": f.bic, "gamma_hat": f.gamma_hat}
            if errors and v in errors:
                row.update(errors[v])
        elif v in skipped:
            reason = skipped[v]
            row = {"variant": v, "status": "pruned" if reason.startswith("pruned") else "unfittable",
                   "reason": reason}
        else:
            continue
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

def graph_to_dict(g: KinematicGraph) -> dict:
    edges = []
    for (i, j), f in sorted(g.edge_models.items()):
        table = g.edge_fits.get((i, j))
        edges.append({
            "i": i, "j": j, "selected": fit_to_dict(f),
            "candidates": candidate_rows(table) if table is not None else [],
            "unfittable": dict(sorted(getattr(table, "unfittable", {}).items())),
        })
    proj = None
    if g.dof_projection is not None:
        P, mean = g.dof_projection
        proj = {"P": P, "mean": mean}
    return {"format": "artikin-graph", "version": FORMAT_VERSION, "parts": g.parts, "edges": edges,
            "selected_edges": [list(e) for e in g.selected_edges], "dof": g.dof_total,
            "dof_links": g.dof_links, "projection": proj, "log_lik": g.log_lik, "bic": g.bic,
            "converged": g.converged}


def graph_from_dict(d: dict) -> KinematicGraph:
    if d.get("format") != "artikin-graph":
        raise ValidationError("not a graph file")
    models = {(e["i"], e["j"]): fit_from_dict(e["selected"]) for e in d["edges"]}
    proj = None
    if d.get("projection"):
        proj = (np.asarray(d["projection"]["P"], float), np.asarray(d["projection"]["mean"], float))
    sel = tuple(tuple(e) for e in d["selected_edges"])
    return KinematicGraph(int(d["parts"]), models, sel, int(d["dof"]), proj, float(d["log_lik"]),
                          float(d["bic"]), {}, bool(d.get("converged", True)))


# ---------------------------------------------------------------------------
# prior database
# ---------------------------------------------------------------------------

def data_digest(p: np.ndarray, q: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(q, dtype="<f8").tobytes())
    return h.hexdigest()


def db_to_dict(db: PriorDatabase) -> dict:
    entries = []
    for e in db.entries:
        entries.append({"fit": fit_to_dict(e.fit), "n": e.n, "k": e.k, "bic": e.bic,
                        "sizes": list(e.sizes), "provenance": list(e.provenance),
                        "digest": data_digest(e.positions, e.orientations),
                        "positions": e.positions, "orientations": e.orientations})
    return {"format": "artikin-prior-db", "version": FORMAT_VERSION, "entries": entries,
            "history": db.history}


def db_from_dict(d: dict) -> PriorDatabase:
    if d.get("format") != "artikin-prior-db":
        raise ValidationError("not a prior database file")
    entries = []
    for k, e in enumerate(d["entries"]):
        p = np.asarray(e["positions"], float).reshape(-1, 3)
        q = np.asarray(e["orientations"], float).reshape(-1, 4)
        if data_digest(p, q) != e["digest"]:
            raise ValidationError(f"prior database entry {k}: pooled data does not match its digest")
        entries.append(PriorEntry(fit_from_dict(e["fit"]), p, q, tuple(int(s) for s in e["sizes"]),
                                  tuple(str(t) for t in e["provenance"])))
    return PriorDatabase(entries, list(d.get("history", [])))


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

STRUCTURE_MODES = ("tree", "heuristic", "exhaustive")
_RUN_KEYS = ("noise", "noise_y", "outlier", "fit", "structure_mode", "estimate_dof")
_FIT_KEYS = tuple(f.name for f in fields(FitConfig))


class RunConfig:
    """Validated run configuration; absent sections keep library defaults."""

    def __init__(self, noise=None, noise_y=None, outlier=None, fit=None, structure_mode="heuristic",
                 estimate_dof=True):
        self.noise = noise
        self.noise_y = noise_y
        self.outlier = outlier or OutlierSpec()
        self.fit = fit or FitConfig(prune_gp=True)
        if structure_mode not in STRUCTURE_MODES:
            raise ValidationError(f"structure_mode must be one of {STRUCTURE_MODES}")
        self.structure_mode = structure_mode
        self.estimate_dof = bool(estimate_dof)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, _RUN_KEYS, "config")
        kw = {}
        if "noise" in d:
            kw["noise"] = noise_from_dict(d["noise"], "config.noise")
        if "noise_y" in d:
            kw["noise_y"] = noise_from_dict(d["noise_y"], "config.noise_y")
        if "outlier" in d:
            _check_keys(d["outlier"], ("gamma", "w"), "config.outlier")
            try:
                kw["outlier"] = OutlierSpec(**{k: float(v) for k, v in d["outlier"].items()})
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"config.outlier: {exc}") from None
        if "fit" in d:
            _check_keys(d["fit"], _FIT_KEYS, "config.fit")
            f = {"prune_gp": True, **d["fit"]}
            for key in ("candidate_set", "latent_dims"):
                if key in f:
                    f[key] = tuple(f[key])
            try:
                kw["fit"] = FitConfig(**f)
            except TypeError as exc:
                raise ValidationError(f"config.fit: {exc}") from None
        for key in ("structure_mode", "estimate_dof"):
            if key in d:
                kw[key] = d[key]
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(read_json(path))

    def to_dict(self) -> dict:
        out = {"outlier": {"gamma": self.outlier.gamma, "w": self.outlier.w},
               "fit": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.fit).items()},
               "structure_mode": self.structure_mode, "estimate_dof": self.estimate_dof}
        if self.noise is not None:
            out["noise"] = noise_to_dict(self.noise)
        if self.noise_y is not None:
            out["noise_y"] = noise_to_dict(self.noise_y)
        return out
