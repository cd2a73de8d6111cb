"""Prior database of link models pooled across trajectories.

A new trajectory either becomes its own entry or is merged into the entry
whose pooled refit lowers the summed BIC the most. The configuration prior
of pooled data is evaluated per source trajectory, so a merge is judged only
on how well one parameter vector explains both data sets.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .estimation import FitConfig, FitResult, as_arrays, fit_all_candidates, select_model
from .models import VARIANTS
from .obs_model import NoiseSpec, OutlierSpec

POOLED_CAP = 2000


@dataclass(frozen=True, eq=False)
class PriorEntry:
    fit: FitResult
    positions: np.ndarray      # pooled relative observations
    orientations: np.ndarray
    sizes: tuple               # observation count per source trajectory
    provenance: tuple          # trajectory ids, same order as ``sizes``

    @property
    def model(self):
        return self.fit.model

    @property
    def bic(self) -> float:
        return self.fit.bic

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def k(self) -> int:
        return self.fit.k

    def config_n(self) -> np.ndarray:
        return np.repeat(np.asarray(self.sizes, dtype=float), self.sizes)


@dataclass
class PriorDatabase:
    entries: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def total_bic(self) -> float:
        return float(sum(e.bic for e in self.entries))

    def assignment(self) -> dict:
        """trajectory id -> entry index."""
        return {t: i for i, e in enumerate(self.entries) for t in e.provenance}

    def __len__(self) -> int:
        return len(self.entries)


def _thin(p, q, groups):
    if len(p) <= POOLED_CAP:
        return p, q, groups
    idx = np.round(np.linspace(0, len(p) - 1, POOLED_CAP)).astype(int)
    return p[idx], q[idx], groups[idx]


def _pool(parts):
    """Concatenate (p, q, sizes, provenance) tuples and apply the pooled-size cap."""
    p = np.concatenate([x[0] for x in parts])
    q = np.concatenate([x[1] for x in parts])
    sizes = tuple(s for x in parts for s in x[2])
    prov = tuple(t for x in parts for t in x[3])
    groups = np.repeat(np.asarray(sizes, dtype=float), sizes)
    p, q, groups = _thin(p, q, groups)
    return p, q, sizes, prov, groups


def fit_entry(data, noise: NoiseSpec, cfg: FitConfig, traj_id: str, outlier: OutlierSpec | None = None) -> PriorEntry:
    p, q = as_arrays(data)
    if len(p) == 0:
        raise ValidationError("cannot add an empty trajectory to the prior database")
    fit = select_model(fit_all_candidates((p, q), noise, cfg, outlier))
    return PriorEntry(fit, p, q, (len(p),), (traj_id,))


def joint_fit(a: PriorEntry, b: PriorEntry, noise: NoiseSpec, cfg: FitConfig,
              outlier: OutlierSpec | None = None) -> PriorEntry:
    """Refit on the pooled data of two entries.

    Candidates are the variants of the two entries; their models seed the
    hypothesis set.
    """
    p, q, sizes, prov, groups = _pool([(a.positions, a.orientations, a.sizes, a.provenance),
                                       (b.positions, b.orientations, b.sizes, b.provenance)])
    variants = tuple(v for v in VARIANTS if v in (a.fit.variant, b.fit.variant))
    jcfg = replace(cfg, candidate_set=variants)
    fits = fit_all_candidates((p, q), noise, jcfg, outlier, config_n=groups,
                              init_models=(a.model, b.model))
    return PriorEntry(select_model(fits), p, q, sizes, prov)


def merge_beneficial(a: PriorEntry, b: PriorEntry, noise: NoiseSpec, cfg: FitConfig | None = None,
                     outlier: OutlierSpec | None = None) -> tuple[bool, PriorEntry]:
    """True iff the pooled model's BIC is below the sum of the separate BICs."""
    cfg = cfg or FitConfig()
    joint = joint_fit(a, b, noise, cfg, outlier)
    return joint.bic < a.bic + b.bic, joint


def _decide(db: PriorDatabase, new: PriorEntry, noise, cfg, outlier):
    """Best option for ``new``: (-1, None, 0.0) for a fresh entry or (index, joint, delta)."""
    best = (-1, None, 0.0)
    for i, e in enumerate(db.entries):
        joint = joint_fit(e, new, noise, cfg, outlier)
        delta = joint.bic - (e.bic + new.bic)
        if delta < best[2]:
            best = (i, joint, delta)
    return best


def assimilate(db: PriorDatabase, data, noise: NoiseSpec, cfg: FitConfig | None = None,
               traj_id: str | None = None, outlier: OutlierSpec | None = None) -> PriorDatabase:
    """Add one trajectory's relative observations, merging when the summed BIC drops."""
    cfg = cfg or FitConfig()
    tid = traj_id if traj_id is not None else f"t{sum(len(e.provenance) for e in db.entries) + 1}"
    if tid in db.assignment():
        raise ValidationError(f"trajectory id {tid!r} already in the database")
    new = fit_entry(data, noise, cfg, tid, outlier)
    idx, joint, delta = _decide(db, new, noise, cfg, outlier)
    if idx < 0:
        db.entries.append(new)
        db.history.append({"trajectory": tid, "action": "new", "entry": len(db.entries) - 1,
                           "delta_bic": 0.0})
    else:
        db.entries[idx] = joint
        db.history.append({"trajectory": tid, "action": "merge", "entry": idx, "delta_bic": float(delta)})
    return db


def learn(trajectories, noise: NoiseSpec, cfg: FitConfig | None = None, ids=None,
          outlier: OutlierSpec | None = None) -> PriorDatabase:
    db = PriorDatabase()
    for i, data in enumerate(trajectories):
        assimilate(db, data, noise, cfg, None if ids is None else ids[i], outlier)
    return db


@dataclass(frozen=True, eq=False)
class PriorPrediction:
    fit: FitResult
    source: str          # "fresh" or "prior"
    entry: int | None    # merged entry index
    fresh: FitResult
    delta_bic: float


def predict_with_prior(db: PriorDatabase, data, noise: NoiseSpec, cfg: FitConfig | None = None,
                       outlier: OutlierSpec | None = None) -> PriorPrediction:
    """Model for a partial trajectory: the pooled refit of the best entry, or a fresh fit."""
    cfg = cfg or FitConfig()
    new = fit_entry(data, noise, cfg, "__query__", outlier)
    idx, joint, delta = _decide(db, new, noise, cfg, outlier)
    if idx < 0:
        return PriorPrediction(new.fit, "fresh", None, new.fit, 0.0)
    return PriorPrediction(joint.fit, "prior", idx, new.fit, float(delta))


def predict_incremental(db: PriorDatabase, data, noise: NoiseSpec, cfg: FitConfig | None = None,
                        start: int = 1, outlier: OutlierSpec | None = None) -> list[PriorPrediction]:
    """Re-run :func:`predict_with_prior` after every new observation."""
    p, q = as_arrays(data)
    return [predict_with_prior(db, (p[:m], q[:m]), noise, cfg, outlier) for m in range(max(1, start), len(p) + 1)]


def remove_trajectory(db: PriorDatabase, traj_id: str, noise: NoiseSpec, cfg: FitConfig | None = None,
                      outlier: OutlierSpec | None = None) -> PriorDatabase:
    """Copy of the database without one trajectory; its entry is refitted (or dropped)."""
    cfg = cfg or FitConfig()
    out = PriorDatabase(list(db.entries), list(db.history))
    for i, e in enumerate(out.entries):
        if traj_id not in e.provenance:
            continue
        keep = [k for k, t in enumerate(e.provenance) if t != traj_id]
        if not keep:
            del out.entries[i]
            return out
        offsets = np.concatenate([[0], np.cumsum(e.sizes)])
        if offsets[-1] != e.n:
            raise ValidationError("cannot remove a trajectory from a thinned entry")
        idx = np.concatenate([np.arange(offsets[k], offsets[k + 1]) for k in keep])
        sizes = tuple(e.sizes[k] for k in keep)
        prov = tuple(e.provenance[k] for k in keep)
        groups = np.repeat(np.asarray(sizes, dtype=float), sizes)
        p, q = e.positions[idx], e.orientations[idx]
        rcfg = replace(cfg, candidate_set=(e.fit.variant,))
        fit = select_model(fit_all_candidates((p, q), noise, rcfg, outlier, config_n=groups,
                                              init_models=(e.model,)))
        out.entries[i] = PriorEntry(fit, p, q, sizes, prov)
        return out
    raise ValidationError(f"trajectory {traj_id!r} is not in the database")
