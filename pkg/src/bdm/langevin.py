"""Stochastic gradient Langevin dynamics on explicit densities.

The classical way to combine a prior with a data-driven density: add the two
score functions and take noisy gradient steps. Used here as a baseline on
closed-form Gaussians and Gaussian mixtures, where the posterior is known.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp


class LangevinError(ValueError):
    pass


@dataclass(frozen=True)
class AnalyticDensity:
    """Mixture of diagonal Gaussians; a single component is a plain Gaussian."""

    weights: np.ndarray
    means: np.ndarray  # (K, dim)
    variances: np.ndarray  # (K, dim)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if var.shape != mu.shape or len(w) != len(mu):
            raise LangevinError("weights, means and variances disagree in shape")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise LangevinError("mixture weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise LangevinError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    @property
    def kind(self) -> str:
        return "gaussian" if len(self.weights) == 1 else "mixture"

    @classmethod
    def gaussian(cls, mean, var) -> "AnalyticDensity":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        var = np.broadcast_to(np.asarray(var, dtype=float), mean.shape)
        return cls(np.ones(1), mean[None], np.array(var)[None])

    @classmethod
    def mixture(cls, weights, means, variances) -> "AnalyticDensity":
        means = np.atleast_2d(np.asarray(means, dtype=float))
        variances = np.broadcast_to(np.asarray(variances, dtype=float)[..., None]
                                    if np.ndim(variances) == 1 else variances, means.shape)
        return cls(np.asarray(weights, dtype=float), means, np.array(variances))


def _component_logpdf(d: AnalyticDensity, y: np.ndarray) -> np.ndarray:
    diff = y[..., None, :] - d.means
    return (np.log(d.weights)
            - 0.5 * np.sum(diff * diff / d.variances + np.log(2 * math.pi * d.variances), axis=-1))


def log_density(d: AnalyticDensity, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return logsumexp(_component_logpdf(d, y), axis=-1)


def grad_log_density(d: AnalyticDensity, y) -> np.ndarray:
    """Score of ``d`` at ``y``; ``y`` may carry leading batch axes."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != d.dimension:
        raise LangevinError(f"point has dimension {y.shape[-1]}, density has {d.dimension}")
    lp = _component_logpdf(d, y)
    resp = np.exp(lp - logsumexp(lp, axis=-1, keepdims=True))
    comp_score = -(y[..., None, :] - d.means) / d.variances
    return np.sum(resp[..., None] * comp_score, axis=-2)


@dataclass(frozen=True)
class LangevinConfig:
    steps: int = 4000
    a: float = 0.1
    b: float = 10.0
    gamma_decay: float = 0.55
    burn_in: float = 0.5
    n_chains: int = 5000
    thin: int = 200

    def step_size(self, t) -> np.ndarray:
        """Polynomially decaying step size a * (b + t)^(-gamma_decay)."""
        return self.a * (self.b + np.asarray(t, dtype=float)) ** (-self.gamma_decay)


def langevin_infer(prior: AnalyticDensity, data_driven: AnalyticDensity, cfg: LangevinConfig,
                   rng: np.random.Generator, init=None) -> np.ndarray:
    """Run ``cfg.n_chains`` independent SGLD chains on the summed scores.

    Returns the thinned post-burn-in states stacked as (n_samples, dim).
    With ``steps == 0`` the result is empty.
    """
    if prior.dimension != data_driven.dimension:
        raise LangevinError("prior and data-driven densities differ in dimension")
    dim = prior.dimension
    if cfg.steps == 0:
        return np.empty((0, dim))
    y = np.zeros((cfg.n_chains, dim)) if init is None else np.array(
        np.broadcast_to(init, (cfg.n_chains, dim)), dtype=float)
    first_kept = int(math.ceil(cfg.burn_in * cfg.steps))
    kept = []
    for t in range(cfg.steps):
        eps = float(cfg.step_size(t))
        drift = grad_log_density(data_driven, y) + grad_log_density(prior, y)
        y = y + 0.5 * eps * drift + math.sqrt(eps) * rng.standard_normal(y.shape)
        if not np.all(np.isfinite(y)):
            raise LangevinError(f"chain diverged at step {t}")
        if t >= first_kept and (t - first_kept) % cfg.thin == 0:
            kept.append(y.copy())
    if not kept:
        return np.empty((0, dim))
    return np.concatenate(kept, axis=0)


def gaussian_product(p: AnalyticDensity, q: AnalyticDensity) -> tuple:
    """Closed-form mean/variance of the normalised product of two Gaussians."""
    if p.kind != "gaussian" or q.kind != "gaussian":
        raise LangevinError("closed-form product only for single Gaussians")
    prec = 1.0 / p.variances[0] + 1.0 / q.variances[0]
    var = 1.0 / prec
    mean = var * (p.means[0] / p.variances[0] + q.means[0] / q.variances[0])
    return mean, var


def write_samples_csv(path, samples: np.ndarray, label: str = "stand-in density") -> None:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["# " + label])
        w.writerow([f"y{i}" for i in range(samples.shape[1])])
        w.writerows(samples.tolist())
