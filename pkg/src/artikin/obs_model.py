"""Gaussian + uniform outlier mixture over relative transforms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .se3 import Pose, residual_arr

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_OUTLIER_WEIGHT = 10.0


@dataclass(frozen=True)
class NoiseSpec:
    """Isotropic per-block noise: sigma_pos [m], sigma_orient [rad].

    ``workspace_diameter`` [m] fixes the uniform outlier density.
    """

    sigma_pos: float = 0.005
    sigma_orient: float = 0.05
    workspace_diameter: float = 2.0

    def __post_init__(self):
        for name in ("sigma_pos", "sigma_orient", "workspace_diameter"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be strictly positive, got {v!r}")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([self.sigma_pos] * 3 + [self.sigma_orient] * 3)

    @property
    def log_peak(self) -> float:
        """Log density of the 6-D Gaussian at zero residual."""
        log_det = 6.0 * math.log(self.sigma_pos) + 6.0 * math.log(self.sigma_orient)
        return -0.5 * (6.0 * LOG_2PI + log_det)

    @property
    def log_uniform(self) -> float:
        # position ball of the workspace x SO(3) Haar volume (8 pi^2)
        return -math.log(self.workspace_diameter ** 3 * math.pi ** 2 * 8.0)

    def scaled(self, factor: float, orientation: bool = True) -> "NoiseSpec":
        return NoiseSpec(
            self.sigma_pos * factor,
            self.sigma_orient * factor if orientation else self.sigma_orient,
            self.workspace_diameter,
        )


@dataclass(frozen=True)
class OutlierSpec:
    gamma: float = 0.1
    w: float = DEFAULT_OUTLIER_WEIGHT

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma!r}")
        if self.w < 0:
            raise ValueError(f"w must be non-negative, got {self.w!r}")

    @property
    def log_prior(self) -> float:
        return -self.w * self.gamma


def gaussian_log_density(res: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """Log N(res; 0, Sigma_z) for residuals of shape (..., 6)."""
    chi2 = np.sum((res / noise.sigmas) ** 2, axis=-1)
    return noise.log_peak - 0.5 * chi2


def mixture_log_density(log_gauss: np.ndarray, gamma: float, noise: NoiseSpec) -> np.ndarray:
    """log[(1 - gamma) N + gamma u] per observation (no gamma prior)."""
    lu = noise.log_uniform
    if gamma <= 0.0:
        return np.asarray(log_gauss, dtype=float)
    if gamma >= 1.0:
        return np.full(np.shape(log_gauss), lu)
    return np.logaddexp(math.log1p(-gamma) + log_gauss, math.log(gamma) + lu)


def responsibilities(log_gauss: np.ndarray, gamma: float, noise: NoiseSpec) -> np.ndarray:
    """Posterior inlier probability p(v = 1 | z) per observation."""
    if gamma <= 0.0:
        return np.ones(np.shape(log_gauss))
    if gamma >= 1.0:
        return np.zeros(np.shape(log_gauss))
    a = math.log1p(-gamma) + np.asarray(log_gauss, dtype=float)
    b = math.log(gamma) + noise.log_uniform
    return np.exp(a - np.logaddexp(a, b))


def log_lik_observation(z: Pose, delta_hat: Pose, noise: NoiseSpec, outlier: OutlierSpec) -> float:
    """Mixture log-likelihood of one relative observation, gamma prior included."""
    res = residual_arr(z.position, z.orientation, delta_hat.position, delta_hat.orientation)
    lg = gaussian_log_density(res, noise)
    return float(mixture_log_density(lg, outlier.gamma, noise)) + outlier.log_prior


def inlier_responsibility(z: Pose, delta_hat: Pose, noise: NoiseSpec, outlier: OutlierSpec) -> float:
    res = residual_arr(z.position, z.orientation, delta_hat.position, delta_hat.orientation)
    return float(responsibilities(gaussian_log_density(res, noise), outlier.gamma, noise))
