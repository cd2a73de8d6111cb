"""Nonparametric link model: PCA latent space + squared-exponential GP regression.

The 12 free entries of the 3x4 transform are whitened by the observation
noise (rotation entries by ``sigma_orient``, translation entries by
``sigma_pos``) so one shared kernel and a unit noise variance serve all
outputs.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .errors import GpTrainingError
from .obs_model import NoiseSpec
from .se3 import orthonormalize_arr, quat_to_matrix

MIN_LATENT_VARIANCE = 1e-12




def flatten_poses(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(n, 12) row-major entries of the 3x4 transforms."""
    rot = quat_to_matrix(q)
    m = np.concatenate([rot, p[..., :, None]], axis=-1)
    return m.reshape(p.shape[:-1] + (12,))


def entry_scales(noise: NoiseSpec) -> np.ndarray:
    s = np.full((3, 4), noise.sigma_orient)
    s[:, 3] = noise.sigma_pos
    return s.reshape(12)


def se_kernel(a: np.ndarray, b: np.ndarray, signal_var: float, length_scales) -> np.ndarray:
    """Squared exponential: sf2 * exp(-0.5 * sum(((a - b) / l)^2))."""
    ls = np.asarray(length_scales, dtype=float)
    d = (a[:, None, :] - b[None, :, :]) / ls
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


@dataclass(frozen=True, eq=False)
class GpParams:
    latent_dim: int
    mean: np.ndarray          # (12,) mean of flattened transforms
    scale: np.ndarray         # (12,) whitening scale per entry
    axes: np.ndarray          # (d, 12) orthonormal principal axes (whitened space)
    signal_var: float
    length_scales: np.ndarray  # (d,)
    train_q: np.ndarray       # (n, d)
    train_y: np.ndarray       # (n, 12) whitened, centered
    noise_var: float = 1.0
    _alpha: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._alpha is None:
            object.__setattr__(self, "_alpha", self._solve())

    def _solve(self) -> np.ndarray:
        if len(self.train_q) == 0:
            raise GpTrainingError("GP has an empty training set")
        k = se_kernel(self.train_q, self.train_q, self.signal_var, self.length_scales)
        k[np.diag_indices_from(k)] += self.noise_var
        return cho_solve(cho_factor(k, lower=True), self.train_y)

    @property
    def n(self) -> int:
        return len(self.train_q)

    def project(self, flat: np.ndarray) -> np.ndarray:
        return ((flat - self.mean) / self.scale) @ self.axes.T

    def predict_flat(self, qs: np.ndarray) -> np.ndarray:
        ks = se_kernel(np.atleast_2d(qs), self.train_q, self.signal_var, self.length_scales)
        return self.mean + (ks @ self._alpha) * self.scale

    def predict(self, qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        flat = self.predict_flat(qs).reshape(-1, 3, 4)
        return flat[:, :, 3].copy(), orthonormalize_arr(flat[:, :, :3])


def _neg_log_marginal(log_theta: np.ndarray, q: np.ndarray, y: np.ndarray) -> float:
    sf2 = math.exp(log_theta[0])
    ls = np.exp(log_theta[1:])
    k = se_kernel(q, q, sf2, ls)
    k[np.diag_indices_from(k)] += 1.0
    try:
        c, low = cho_factor(k, lower=True)
    except np.linalg.LinAlgError:
        return 1e300
    alpha = cho_solve((c, low), y)
    n, m = y.shape
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return 0.5 * float(np.sum(y * alpha)) + 0.5 * m * logdet + 0.5 * n * m * math.log(2 * math.pi)


def fit_hyperparameters(q: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Maximize the summed marginal likelihood: log grid, then Nelder-Mead."""
    d = q.shape[1]
    out_var = max(float(np.mean(np.var(y, axis=0))), 1e-6)
    q_std = np.maximum(np.std(q, axis=0), 1e-9)
    sf_grid = np.log(out_var) + np.log([0.3, 1.0, 3.0, 10.0])
    l_grid = np.log([0.05, 0.15, 0.5, 1.5, 5.0])
    best = None
    # grid over a shared length scale; the local search separates dimensions
    for lsf, rel in itertools.product(sf_grid, l_grid):
        theta = np.concatenate([[lsf], np.log(q_std) + rel])
        val = _neg_log_marginal(theta, q, y)
        if best is None or val < best[0]:
            best = (val, theta)
    lo = np.concatenate([[np.log(out_var) - 8.0], np.log(q_std) - 6.0])
    hi = np.concatenate([[np.log(out_var) + 8.0], np.log(q_std) + 4.0])

    def objective(theta):
        return _neg_log_marginal(np.clip(theta, lo, hi), q, y)

    res = minimize(objective, best[1], method="Nelder-Mead",
                   options={"maxfev": 60 * (d + 1), "xatol": 1e-3, "fatol": 1e-4})
    theta = np.clip(res.x, lo, hi) if res.fun <= best[0] else best[1]
    return float(math.exp(theta[0])), np.exp(theta[1:])


def gp_train(p: np.ndarray, q: np.ndarray, latent_dim: int, noise: NoiseSpec) -> GpParams:
    """Train a GP link model on n poses (arrays) with a ``latent_dim``-D latent space."""
    n = len(p)
    d = int(latent_dim)
    if d < 1:
        raise GpTrainingError("latent_dim must be >= 1")
    if n < d + 2:
        raise GpTrainingError(f"GP with d={d} needs at least {d + 2} observations, got {n}")
    flat = flatten_poses(p, q)
    mean = flat.mean(axis=0)
    scale = entry_scales(noise)
    y = (flat - mean) / scale
    _, s, vt = np.linalg.svd(y, full_matrices=False)
    if s[0] ** 2 / n < MIN_LATENT_VARIANCE:
        raise GpTrainingError("observations have zero variance; use the rigid model")
    axes = vt[:d].copy()
    # deterministic sign: largest-magnitude component positive
    for i in range(d):
        if axes[i, np.argmax(np.abs(axes[i]))] < 0:
            axes[i] = -axes[i]
    latent = y @ axes.T
    sf2, ls = fit_hyperparameters(latent, y)
    return GpParams(d, mean, scale, axes, sf2, ls, latent, y)
