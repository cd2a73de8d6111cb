"""Kinematic structure: per-edge fits, spanning trees, loop-consistent likelihoods, DOF estimation."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ValidationError
from .estimation import FitConfig, FitResult, fit_all_candidates, select_model
from .models import LinkModel
from .obs_model import NoiseSpec, gaussian_log_density
from .se3 import compose_arr, inverse_arr, relative_arr, residual_arr, retract_arr
from .simulator import ObjectTrajectory

Edge = tuple[int, int]

LM_LAMBDA0 = 1e-3
LM_STEP_TOL = 1e-9
LM_MAX_ITERS = 100
JAC_EPS = 1e-7
EXHAUSTIVE_MAX_PARTS = 5


@dataclass(frozen=True, eq=False)
class KinematicGraph:
    parts: int
    edge_models: dict           # (i, j) -> selected FitResult, all pairs
    selected_edges: tuple       # sorted (i, j) pairs
    dof_total: int
    dof_projection: tuple | None = None   # (P (D x D_links), mean (D_links,))
    log_lik: float = float("nan")
    bic: float = float("nan")
    edge_fits: dict = field(default_factory=dict)   # (i, j) -> FitList (BIC table)
    converged: bool = True

    @property
    def dof_links(self) -> int:
        return sum(self.edge_models[e].model.dof for e in self.selected_edges)


def all_pairs(p: int) -> list[Edge]:
    return [(i, j) for i in range(1, p + 1) for j in range(i + 1, p + 1)]


def _key(e) -> Edge:
    i, j = e
    return (i, j) if i < j else (j, i)


# ---------------------------------------------------------------------------
# edge fitting and spanning trees
# ---------------------------------------------------------------------------

def fit_all_edges(traj: ObjectTrajectory, noise: NoiseSpec, cfg: FitConfig | None = None
                  ) -> tuple[dict, dict]:
    """Fit all candidates on every pair; returns (selected per edge, full fit lists)."""
    cfg = cfg or FitConfig()
    selected, tables = {}, {}
    for e in all_pairs(traj.p):
        fits = fit_all_candidates(traj.pair(*e), noise, cfg)
        tables[e] = fits
        selected[e] = select_model(fits)
    return selected, tables


def _cost(v) -> float:
    return float(v.bic) if isinstance(v, FitResult) else float(v)


class _DisjointSet:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def spanning_tree(edge_costs: Mapping) -> tuple[Edge, ...]:
    """Kruskal minimum spanning tree over BIC costs (ties by (cost, i, j))."""
    edges = sorted((_cost(v), *_key(e)) for e, v in edge_costs.items())
    nodes = sorted({x for _, i, j in edges for x in (i, j)})
    ds = _DisjointSet(nodes)
    tree = []
    for _, i, j in edges:
        if ds.union(i, j):
            tree.append((i, j))
            if len(tree) == len(nodes) - 1:
                break
    if len(tree) != len(nodes) - 1:
        raise ValidationError("cost graph is disconnected")
    return tuple(sorted(tree))


def is_connected(edges: Iterable[Edge], p: int) -> bool:
    ds = _DisjointSet(range(1, p + 1))
    comps = p
    for i, j in edges:
        if ds.union(i, j):
            comps -= 1
    return comps == 1


def is_tree(edges, p: int) -> bool:
    edges = list(edges)
    return len(edges) == p - 1 and is_connected(edges, p)


# ---------------------------------------------------------------------------
# pose-graph optimization
# ---------------------------------------------------------------------------

def _chain_init(edges, p, anchor_p, anchor_q, deltas):
    """Poses of all parts by chaining predictions out from part 1 along a BFS tree."""
    n = anchor_p.shape[0]
    P = np.zeros((n, p, 3))
    Q = np.zeros((n, p, 4))
    P[:, 0], Q[:, 0] = anchor_p, anchor_q
    done = {1}
    frontier = [1]
    adj = {}
    for (i, j) in edges:
        adj.setdefault(i, []).append((j, (i, j)))
        adj.setdefault(j, []).append((i, (i, j)))
    while frontier:
        nxt = []
        for a in frontier:
            for b, e in sorted(adj.get(a, [])):
                if b in done:
                    continue
                dp, dq = deltas[e]
                if e[0] == a:
                    P[:, b - 1], Q[:, b - 1] = compose_arr(P[:, a - 1], Q[:, a - 1], dp, dq)
                else:
                    ip, iq = inverse_arr(dp, dq)
                    P[:, b - 1], Q[:, b - 1] = compose_arr(P[:, a - 1], Q[:, a - 1], ip, iq)
                done.add(b)
                nxt.append(b)
        frontier = nxt
    if len(done) != p:
        raise ValidationError("selected edges do not connect all parts")
    return P, Q


def _loop_residuals(P, Q, edges, deltas, sig):
    """Whitened residuals (..., n, 6|E|) of the relative poses against the predictions."""
    out = []
    for e in edges:
        i, j = e
        rp, rq = relative_arr(P[..., i - 1, :], Q[..., i - 1, :], P[..., j - 1, :], Q[..., j - 1, :])
        dp, dq = deltas[e]
        out.append(residual_arr(rp, rq, dp, dq) / sig)
    return np.concatenate(out, axis=-1)


@dataclass
class PoseGraphResult:
    positions: np.ndarray
    orientations: np.ndarray
    cost: float
    converged: bool
    iterations: int
    cost_history: list = field(default_factory=list)


def optimize_poses(edges, p: int, anchor, deltas: Mapping, noise: NoiseSpec,
                   init=None, max_iters: int = LM_MAX_ITERS) -> PoseGraphResult:
    """Damped Gauss-Newton over the poses of parts 2..p, batched over timesteps.

    ``anchor`` is ``(positions, orientations)`` of part 1 per timestep;
    ``deltas`` maps each edge to its predicted relative poses ``(n, 3), (n, 4)``.
    """
    edges = [_key(e) for e in edges]
    anchor_p, anchor_q = anchor
    if init is None:
        P, Q = _chain_init(edges, p, anchor_p, anchor_q, deltas)
    else:
        P, Q = (np.array(a, dtype=float) for a in init)
        P[:, 0], Q[:, 0] = anchor_p, anchor_q
    sig = noise.sigmas
    r = _loop_residuals(P, Q, edges, deltas, sig)
    cost = np.sum(r * r, axis=-1)
    history = [float(cost.sum())]
    if is_tree(edges, p) or p == 1:
        return PoseGraphResult(P, Q, history[0], True, 0, history)

    n = P.shape[0]
    nv = 6 * (p - 1)
    lam = np.full(n, LM_LAMBDA0)
    eye = np.eye(nv)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        # forward-difference Jacobian, all variables in one batch
        steps = JAC_EPS * np.eye(nv).reshape(nv, p - 1, 6)
        Pp = np.broadcast_to(P, (nv,) + P.shape).copy()
        Qp = np.broadcast_to(Q, (nv,) + Q.shape).copy()
        pp, qp = retract_arr(Pp[:, :, 1:], Qp[:, :, 1:], steps[:, None])
        Pp[:, :, 1:], Qp[:, :, 1:] = pp, qp
        J = (_loop_residuals(Pp, Qp, edges, deltas, sig) - r[None]) / JAC_EPS   # (nv, n, m)
        J = np.moveaxis(J, 0, -1)                                                # (n, m, nv)
        H = np.einsum("nmi,nmj->nij", J, J)
        g = np.einsum("nmi,nm->ni", J, r)
        while True:
            delta = -np.linalg.solve(H + lam[:, None, None] * eye, g[..., None])[..., 0]
            np_, nq = retract_arr(P[:, 1:], Q[:, 1:], delta.reshape(n, p - 1, 6))
            Pn = P.copy()
            Qn = Q.copy()
            Pn[:, 1:], Qn[:, 1:] = np_, nq
            rn = _loop_residuals(Pn, Qn, edges, deltas, sig)
            cn = np.sum(rn * rn, axis=-1)
            accept = cn < cost
            if accept.any() or np.all(lam > 1e12):
                break
            lam = lam * 10.0
        P = np.where(accept[:, None, None], Pn, P)
        Q = np.where(accept[:, None, None], Qn, Q)
        r = np.where(accept[:, None], rn, r)
        cost = np.where(accept, cn, cost)
        lam = np.where(accept, lam / 10.0, lam * 10.0)
        history.append(float(cost.sum()))
        step = np.linalg.norm(np.where(accept[:, None], delta, 0.0), axis=-1)
        if step.max() < LM_STEP_TOL or np.all(lam > 1e12):
            converged = True
            break
    return PoseGraphResult(P, Q, float(cost.sum()), converged, it, history)


# ---------------------------------------------------------------------------
# graph likelihood and DOF estimation
# ---------------------------------------------------------------------------

class GraphEvaluator:
    """Scores edge subsets on one trajectory; caches per-edge configurations."""

    def __init__(self, traj: ObjectTrajectory, edge_models: Mapping, noise: NoiseSpec,
                 noise_y: NoiseSpec | None = None):
        self.traj = traj
        self.edge_models = {_key(e): v for e, v in edge_models.items()}
        self.noise = noise
        self.noise_y = noise_y or noise
        self._q = {}
        self._cache = {}

    def model(self, e) -> LinkModel:
        return self.edge_models[_key(e)].model

    def configs(self, e) -> np.ndarray:
        e = _key(e)
        if e not in self._q:
            m = self.model(e)
            self._q[e] = m.inverse_arr(*self.traj.pair(*e), self.noise) if m.dof else np.zeros((self.traj.n, 0))
        return self._q[e]

    def q_links(self, edges) -> np.ndarray:
        """Stacked link configurations; revolute angles unwrapped over time."""
        cols = []
        for e in edges:
            q = self.configs(e)
            if self.model(e).variant == "revolute":
                q = np.unwrap(q, axis=0)
            cols.append(q)
        return np.concatenate(cols, axis=1) if cols else np.zeros((self.traj.n, 0))

    def log_lik(self, edges, q_links=None, dof: int | None = None):
        """Gaussian pose likelihood of all parts after loop-consistent pose optimization."""
        edges = sorted(_key(e) for e in edges)
        traj = self.traj
        n, p = traj.n, traj.p
        if q_links is None:
            q_links = self.q_links(edges)
        if dof is None:
            dof = q_links.shape[1]
        deltas = {}
        col = 0
        for e in edges:
            m = self.model(e)
            deltas[e] = m.forward_arr(q_links[:, col:col + m.dof] if m.dof else np.zeros((n, 0)))
            col += m.dof
        res = optimize_poses(edges, p, traj.part(1), deltas, self.noise)
        r = residual_arr(traj.positions, traj.orientations, res.positions, res.orientations)
        ll = float(np.sum(gaussian_log_density(r, self.noise_y)))
        if dof:
            ll -= n * dof * math.log(n)
        return ll, res.converged

    def bic(self, edges, dof: int | None = None):
        return self.evaluate(edges)[0] if dof is None else self._score(edges, dof)[0]

    def _k(self, edges) -> int:
        return sum(self.edge_models[_key(e)].model.param_count for e in edges)

    def _score(self, edges, dof):
        """BIC with a rank-``dof`` projection of the link configurations."""
        edges = tuple(sorted(_key(e) for e in edges))
        ql = self.q_links(edges)
        dl = ql.shape[1]
        proj = None
        k = self._k(edges)
        if 0 < dof < dl:
            mean = ql.mean(axis=0)
            _, _, vt = np.linalg.svd(ql - mean, full_matrices=False)
            P = vt[:dof]
            ql = mean + (ql - mean) @ P.T @ P
            proj = (P, mean)
            k += dof * dl + dl
        ll, conv = self.log_lik(edges, ql, dof)
        n_eff = self.traj.n * self.traj.p
        return -2.0 * ll + k * math.log(n_eff), ll, proj, conv

    def evaluate(self, edges, estimate_dof: bool = True):
        """(bic, log_lik, dof, projection, converged) with the best DOF count.

        Trees keep the sum of their link DOFs.
        """
        edges = tuple(sorted(_key(e) for e in edges))
        key = (edges, estimate_dof)
        if key in self._cache:
            return self._cache[key]
        dl = sum(self.model(e).dof for e in edges)
        if not estimate_dof or is_tree(edges, self.traj.p) or dl <= 1:
            cands = [dl]
        else:
            cands = list(range(1, dl + 1))
        best = None
        for d in cands:
            b, ll, proj, conv = self._score(edges, d)
            if best is None or b < best[0]:
                best = (b, ll, d, proj, conv)
        self._cache[key] = best
        return best


def estimate_dofs(graph: KinematicGraph, traj: ObjectTrajectory, noise: NoiseSpec,
                  noise_y: NoiseSpec | None = None):
    """(D_object, projection) minimizing the graph BIC over D = 1..D_links."""
    if traj.n < 2:
        raise ValidationError("DOF estimation needs at least 2 timesteps")
    ev = GraphEvaluator(traj, graph.edge_models, noise, noise_y)
    _, _, d, proj, _ = ev.evaluate(graph.selected_edges)
    return d, proj


def graph_log_lik(graph: KinematicGraph, traj: ObjectTrajectory, noise: NoiseSpec,
                  noise_y: NoiseSpec | None = None) -> float:
    ev = GraphEvaluator(traj, graph.edge_models, noise, noise_y)
    return ev._score(graph.selected_edges, graph.dof_total)[1]


def graph_bic(graph: KinematicGraph, traj: ObjectTrajectory, noise: NoiseSpec,
              noise_y: NoiseSpec | None = None) -> float:
    ev = GraphEvaluator(traj, graph.edge_models, noise, noise_y)
    return ev._score(graph.selected_edges, graph.dof_total)[0]


# ---------------------------------------------------------------------------
# structure search
# ---------------------------------------------------------------------------

def _make_graph(ev: GraphEvaluator, edges, tables, estimate_dof=True) -> KinematicGraph:
    b, ll, d, proj, conv = ev.evaluate(edges, estimate_dof)
    return KinematicGraph(ev.traj.p, dict(ev.edge_models), tuple(sorted(edges)), d, proj, ll, b,
                          dict(tables or {}), conv)


def _neighbors(edges: tuple, p: int):
    cur = set(edges)
    for e in all_pairs(p):
        if e in cur:
            rest = cur - {e}
            if is_connected(rest, p):
                yield tuple(sorted(rest))
        else:
            yield tuple(sorted(cur | {e}))


def heuristic_search(ev: GraphEvaluator, start) -> tuple:
    """Best-improvement local search over single-edge additions and removals."""
    cur = tuple(sorted(start))
    cur_bic = ev.evaluate(cur)[0]
    while True:
        best = None
        for nb in _neighbors(cur, ev.traj.p):
            b = ev.evaluate(nb)[0]
            if b < cur_bic and (best is None or b < best[0]):
                best = (b, nb)
        if best is None:
            return cur
        cur_bic, cur = best


def connected_subgraphs(p: int):
    pairs = all_pairs(p)
    for r in range(p - 1, len(pairs) + 1):
        for sub in itertools.combinations(pairs, r):
            if is_connected(sub, p):
                yield sub


def exhaustive_search(ev: GraphEvaluator) -> tuple:
    p = ev.traj.p
    if p > EXHAUSTIVE_MAX_PARTS:
        raise ValidationError(f"exhaustive structure search is limited to p <= {EXHAUSTIVE_MAX_PARTS}")
    return min(connected_subgraphs(p), key=lambda s: (ev.evaluate(s)[0], len(s), s))


def learn_structure(traj: ObjectTrajectory, noise: NoiseSpec, cfg: FitConfig | None = None,
                    mode: str = "heuristic", estimate_dof: bool = True, noise_y: NoiseSpec | None = None,
                    edge_fits=None) -> KinematicGraph:
    """Fit all edges and select a structure (``tree`` | ``heuristic`` | ``exhaustive``)."""
    if mode not in ("tree", "heuristic", "exhaustive"):
        raise ValidationError(f"unknown structure mode {mode!r}")
    if traj.p < 2:
        raise ValidationError("structure learning needs at least two parts")
    if edge_fits is None:
        selected, tables = fit_all_edges(traj, noise, cfg)
    else:
        selected, tables = edge_fits
    ev = GraphEvaluator(traj, selected, noise, noise_y)
    tree = spanning_tree(selected)
    if mode == "tree":
        edges = tree
    elif mode == "heuristic":
        edges = heuristic_search(ev, tree)
    else:
        edges = exhaustive_search(ev)
    return _make_graph(ev, edges, tables, estimate_dof)


def heuristic_graph_search(traj, noise, cfg=None, **kw) -> KinematicGraph:
    return learn_structure(traj, noise, cfg, mode="heuristic", **kw)
