"""Robust link fitting (MLESAC + quasi-Newton + EM on the outlier ratio) and BIC selection."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateSampleError, GpTrainingError, ValidationError, VariantNotFittableError
from .gp import gp_train
from .models import (
    MIN_SAMPLES,
    VARIANTS,
    GpModel,
    LinkModel,
    fit_minimal,
    with_config_range,
)
from .obs_model import NoiseSpec, OutlierSpec, gaussian_log_density, mixture_log_density, responsibilities
from .se3 import Pose, residual_arr, stack

HYPOTHESIS_EM_STEPS = 5
EM_TOL = 1e-9
INLIER_THRESHOLD = 0.5


@dataclass(frozen=True)
class FitConfig:
    mlesac_iters: int = 50
    bfgs_max_evals: int = 200
    em_iters: int = 10
    rng_seed: int = 0
    candidate_set: tuple[str, ...] = VARIANTS
    latent_dims: tuple[int, ...] = (1, 2)
    # skip GP training when its BIC provably cannot beat the best parametric fit
    prune_gp: bool = False

    def __post_init__(self):
        for name in ("mlesac_iters", "bfgs_max_evals", "em_iters"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        cands = tuple(self.candidate_set)
        bad = [c for c in cands if c not in VARIANTS]
        if bad or not cands:
            raise ValidationError(f"unknown or empty candidate set: {bad or cands}")
        object.__setattr__(self, "candidate_set", tuple(v for v in VARIANTS if v in cands))
        dims = tuple(int(d) for d in self.latent_dims)
        if not dims or min(dims) < 1:
            raise ValidationError("latent_dims must be positive integers")
        object.__setattr__(self, "latent_dims", dims)
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise ValidationError("rng_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class FitResult:
    model: LinkModel
    gamma_hat: float
    log_lik: float
    bic: float
    n: int

    @property
    def variant(self) -> str:
        return self.model.variant

    @property
    def k(self) -> int:
        return self.model.param_count


class FitList(list):
    """Fit results plus the variants that could not be fitted (variant -> reason)."""

    def __init__(self, fits: Iterable[FitResult] = (), unfittable: dict | None = None):
        super().__init__(fits)
        self.unfittable = dict(unfittable or {})


def bic(log_lik: float, k: int, n: int) -> float:
    return -2.0 * log_lik + k * math.log(n)


def as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        return np.asarray(data[0], float).reshape(-1, 3), np.asarray(data[1], float).reshape(-1, 4)
    return stack(data)


def thread_count() -> int:
    env = os.environ.get("ARTIKIN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"ARTIKIN_THREADS must be an integer, got {env!r}") from None
    return min(4, os.cpu_count() or 1)


def _config_prior(d: int, n: int, config_n) -> float:
    """Sum over observations of log n^-d; ``config_n`` optionally gives per-observation counts."""
    if d == 0:
        return 0.0
    if config_n is None:
        return -d * n * math.log(n)
    return -d * float(np.sum(np.log(np.asarray(config_n, dtype=float))))


def observation_log_gauss(model: LinkModel, p, q, noise: NoiseSpec) -> np.ndarray:
    pp, qp = model.project_arr(p, q, noise)
    return gaussian_log_density(residual_arr(p, q, pp, qp), noise)


def _total(log_gauss, gamma, noise, outlier_w, d, config_n) -> float:
    n = len(log_gauss)
    mix = float(np.sum(mixture_log_density(log_gauss, gamma, noise)))
    return mix - outlier_w * gamma + _config_prior(d, n, config_n)


def sequence_log_lik(model: LinkModel, data, noise: NoiseSpec, outlier: OutlierSpec, config_n=None) -> float:
    """Log-likelihood of a sequence of relative observations under ``model``.

    Each observation is projected onto the model (forward of inverse) and
    scored with the outlier mixture; every observation also pays the uniform
    configuration prior ``n^-d``. The outlier-ratio prior enters once.
    """
    p, q = as_arrays(data)
    if len(p) == 0:
        raise ValidationError("sequence_log_lik needs at least one observation")
    lg = observation_log_gauss(model, p, q, noise)
    return _total(lg, outlier.gamma, noise, outlier.w, model.dof, config_n)


def em_gamma(log_gauss: np.ndarray, gamma: float, noise: NoiseSpec, steps: int) -> float:
    """Iterate gamma <- mean outlier responsibility."""
    g = gamma
    for _ in range(steps):
        new = float(np.mean(1.0 - responsibilities(log_gauss, g, noise)))
        if abs(new - g) < EM_TOL:
            g = new
            break
        g = new
    return g


def _start_gamma(outlier: OutlierSpec) -> float:
    # the EM fixed point at 0 or 1 is absorbing; start strictly inside
    return min(max(outlier.gamma, 1e-3), 1.0 - 1e-3)


def _chart_scale(model: LinkModel, noise: NoiseSpec) -> np.ndarray:
    blocks = {"rigid": 1, "prismatic": 1, "revolute": 2}[model.variant]
    s = np.tile(np.r_[[noise.sigma_pos] * 3, [noise.sigma_orient] * 3], blocks)
    if model.variant == "prismatic":
        s = np.r_[s[:6], [noise.sigma_orient] * 3]
    return s


def _refine(model: LinkModel, gamma: float, p, q, noise, outlier, cfg: FitConfig, config_n):
    """Alternate quasi-Newton ascent over the model chart with EM updates of gamma."""
    d = model.dof

    def score(m, g):
        lg = observation_log_gauss(m, p, q, noise)
        return _total(lg, g, noise, outlier.w, d, config_n), lg

    cur_ll, lg = score(model, gamma)
    best = (cur_ll, model, gamma)
    scale = _chart_scale(model, noise)
    for _ in range(cfg.em_iters):
        base = model

        def objective(x, g=gamma):
            try:
                m = base.perturb(x * scale)
            except DegenerateSampleError:
                return 1e300
            val = -score(m, g)[0]
            return val if math.isfinite(val) else 1e300

        res = minimize(objective, np.zeros(len(scale)), method="L-BFGS-B",
                       options={"maxfun": cfg.bfgs_max_evals, "eps": 1e-6})
        if res.fun < -cur_ll:
            model = base.perturb(res.x * scale)
        _, lg = score(model, gamma)
        gamma = em_gamma(lg, gamma, noise, 1)
        new_ll = _total(lg, gamma, noise, outlier.w, d, config_n)
        if new_ll > best[0]:
            best = (new_ll, model, gamma)
        converged = new_ll - cur_ll < 1e-7
        cur_ll = new_ll
        if converged:
            break
    return best


def _inlier_subset(model, gamma, p, q, noise):
    lg = observation_log_gauss(model, p, q, noise)
    mask = responsibilities(lg, gamma, noise) > INLIER_THRESHOLD
    return (p[mask], q[mask]) if mask.any() else (p, q)


def _finish(model, gamma, ll, p, q, noise) -> FitResult:
    model = with_config_range(model, *_inlier_subset(model, gamma, p, q, noise), noise)
    return FitResult(model, float(gamma), float(ll), bic(ll, model.param_count, len(p)), len(p))


def mlesac_fit(variant: str, data, noise: NoiseSpec, outlier_init: OutlierSpec | None = None,
               cfg: FitConfig | None = None, *, config_n=None, init_models: Sequence[LinkModel] = ()) -> FitResult:
    """Robust fit of one parametric variant; ``variant='gp'`` dispatches to :func:`gp_fit`.

    ``init_models`` of the same variant join the random hypotheses (warm start).
    """
    cfg = cfg or FitConfig()
    outlier = outlier_init or OutlierSpec()
    if variant == "gp":
        return gp_fit(data, noise, outlier, cfg, config_n=config_n)
    if variant not in MIN_SAMPLES:
        raise ValidationError(f"unknown variant {variant!r}")
    p, q = as_arrays(data)
    n = len(p)
    need = MIN_SAMPLES[variant]
    if n < need:
        raise VariantNotFittableError(variant, f"needs at least {need} observations, got {n}")
    rng = np.random.default_rng(int(cfg.rng_seed) ^ VARIANTS.index(variant))
    g0 = _start_gamma(outlier)
    d = {"rigid": 0, "prismatic": 1, "revolute": 1}[variant]

    best = None
    hypotheses = [m for m in init_models if m.variant == variant]
    for _ in range(cfg.mlesac_iters):
        idx = rng.choice(n, size=need, replace=False)
        try:
            hypotheses.append(fit_minimal(variant, [Pose(p[i], q[i]) for i in idx]))
        except DegenerateSampleError:
            continue
    for hyp in hypotheses:
        lg = observation_log_gauss(hyp, p, q, noise)
        g = em_gamma(lg, g0, noise, HYPOTHESIS_EM_STEPS)
        ll = _total(lg, g, noise, outlier.w, d, config_n)
        if best is None or ll > best[0]:
            best = (ll, hyp, g)
    if best is None:
        raise VariantNotFittableError(variant, "all minimal samples were degenerate")
    ll, model, gamma = _refine(best[1], best[2], p, q, noise, outlier, cfg, config_n)
    return _finish(model, gamma, ll, p, q, noise)


def gp_fit(data, noise: NoiseSpec, outlier: OutlierSpec | None = None, cfg: FitConfig | None = None,
           latent_dim: int | None = None, *, config_n=None) -> FitResult:
    """Train on all data, estimate gamma by EM, optionally retrain once on the inliers.

    Without ``latent_dim`` every dimension in ``cfg.latent_dims`` is tried and
    the lowest-BIC result returned.
    """
    cfg = cfg or FitConfig()
    outlier = outlier or OutlierSpec()
    p, q = as_arrays(data)
    n = len(p)
    if latent_dim is None:
        fits, reasons = [], []
        for d in cfg.latent_dims:
            try:
                fits.append(gp_fit((p, q), noise, outlier, cfg, d, config_n=config_n))
            except (GpTrainingError, VariantNotFittableError) as exc:
                reasons.append(str(exc))
        if not fits:
            raise VariantNotFittableError("gp", "; ".join(reasons))
        return min(fits, key=lambda f: (f.bic, f.k))
    d = int(latent_dim)
    try:
        model = GpModel(params=gp_train(p, q, d, noise))
    except GpTrainingError as exc:
        raise VariantNotFittableError("gp", str(exc)) from None
    lg = observation_log_gauss(model, p, q, noise)
    gamma = em_gamma(lg, _start_gamma(outlier), noise, cfg.em_iters)
    ll = _total(lg, gamma, noise, outlier.w, d, config_n)
    best = (ll - 0.5 * model.param_count * math.log(n), model, gamma, ll)
    mask = responsibilities(lg, gamma, noise) > INLIER_THRESHOLD
    m = int(mask.sum())
    # only retrain on a clear inlier majority; this keeps k >= 1 + d + 3n
    if m < n and 2 * m >= n and m >= d + 2:
        try:
            model2 = GpModel(params=gp_train(p[mask], q[mask], d, noise))
            lg2 = observation_log_gauss(model2, p, q, noise)
            g2 = em_gamma(lg2, gamma, noise, cfg.em_iters)
            ll2 = _total(lg2, g2, noise, outlier.w, d, config_n)
            cand = (ll2 - 0.5 * model2.param_count * math.log(n), model2, g2, ll2)
            if cand[0] > best[0]:
                best = cand
        except GpTrainingError:
            pass
    _, model, gamma, ll = best
    return _finish(model, gamma, ll, p, q, noise)


def gp_bic_lower_bound(n: int, d: int, noise: NoiseSpec, config_n=None) -> float:
    """No GP with latent dimension ``d`` fitted by :func:`gp_fit` can score below this."""
    per_obs = max(noise.log_peak, noise.log_uniform)
    ll_max = n * per_obs + _config_prior(d, n, config_n)
    k_min = 1 + d + 6 * math.ceil(n / 2)
    return bic(ll_max, k_min, n)


def _fit_one(variant, p, q, noise, outlier, cfg, config_n, init_models=()):
    try:
        return mlesac_fit(variant, (p, q), noise, outlier, cfg, config_n=config_n, init_models=init_models), None
    except VariantNotFittableError as exc:
        return None, exc.reason


def fit_all_candidates(data, noise: NoiseSpec, cfg: FitConfig | None = None,
                       outlier: OutlierSpec | None = None, *, config_n=None, init_models=()) -> FitList:
    """Fit every variant in ``cfg.candidate_set``; unfittable ones go to ``.unfittable``.

    ``config_n`` replaces the sample count in the configuration prior per
    observation (pooled data keeps the count of its source trajectory).
    """
    cfg = cfg or FitConfig()
    outlier = outlier or OutlierSpec()
    p, q = as_arrays(data)
    if len(p) == 0:
        raise ValidationError("no observations to fit")
    parametric = [v for v in cfg.candidate_set if v != "gp"]
    results: dict[str, FitResult] = {}
    unfittable: dict[str, str] = {}
    workers = min(thread_count(), max(1, len(parametric)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outs = list(pool.map(lambda v: _fit_one(v, p, q, noise, outlier, cfg, config_n, init_models), parametric))
    else:
        outs = [_fit_one(v, p, q, noise, outlier, cfg, config_n, init_models) for v in parametric]
    for v, (fit, reason) in zip(parametric, outs):
        if fit is None:
            unfittable[v] = reason
        else:
            results[v] = fit
    if "gp" in cfg.candidate_set:
        n = len(p)
        dims = [d for d in cfg.latent_dims if n >= d + 2]
        if cfg.prune_gp and results and dims:
            floor = min(f.bic for f in results.values())
            dims = [d for d in dims if gp_bic_lower_bound(n, d, noise, config_n) < floor]
            if not dims:
                unfittable["gp"] = "pruned: BIC lower bound exceeds best parametric fit"
        if dims:
            fit, reason = _fit_one("gp", p, q, noise, outlier, replace(cfg, latent_dims=tuple(dims)), config_n)
            if fit is None:
                unfittable["gp"] = reason
            else:
                results["gp"] = fit
        elif "gp" not in unfittable:
            unfittable["gp"] = f"needs at least {min(cfg.latent_dims) + 2} observations, got {n}"
    return FitList([results[v] for v in VARIANTS if v in results], unfittable)


def select_model(fits: Sequence[FitResult]) -> FitResult:
    """Lowest BIC; ties go to fewer parameters, then the fixed variant order."""
    if not fits:
        raise VariantNotFittableError("any", "no candidate model could be fitted")
    return min(fits, key=lambda f: (f.bic, f.k, VARIANTS.index(f.variant)))


def fit_and_select(data, noise: NoiseSpec, cfg: FitConfig | None = None,
                   outlier: OutlierSpec | None = None) -> tuple[FitResult, FitList]:
    fits = fit_all_candidates(data, noise, cfg, outlier)
    return select_model(fits), fits


SWEEP_SIGMAS = (0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5)


def noise_sweep(data, sigmas=SWEEP_SIGMAS, cfg: FitConfig | None = None, orient_per_pos: float = 1.0,
                workspace_diameter: float = 2.0, outlier: OutlierSpec | None = None) -> list[dict]:
    """Refit all candidates under a range of assumed noise levels.

    The assumed covariance is scaled as a whole: sigma_orient = orient_per_pos * sigma_pos.
    Returns one row per level with the BIC of every candidate and the selected variant.
    """
    rows = []
    for s in sigmas:
        noise = NoiseSpec(float(s), float(s) * orient_per_pos, workspace_diameter)
        fits = fit_all_candidates(data, noise, cfg, outlier)
        best = select_model(fits)
        rows.append({"sigma_pos": float(s), "sigma_orient": noise.sigma_orient,
                     "bic": {f.variant: f.bic for f in fits}, "selected": best.variant})
    return rows
