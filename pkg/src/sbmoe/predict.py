"""Posterior predictive construction, Gaussian-mixture utilities and the
kernel-regression baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mathcore
from .errors import DimensionMismatch, DomainError
from .mathcore import sample_bartlett_lower, sample_niw_batch
from .model import Dataset, VariationalState


@dataclass
class GaussianMixture:
    """Finite Gaussian mixture with weights (M,), means (M, d), covariances (M, d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def validate(self):
        m = self.n_components
        if self.means.shape[0] != m or self.covariances.shape[0] != m:
            raise DimensionMismatch("component counts disagree")
        if np.any(self.weights < 0.0) or abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise DomainError("weights must be nonnegative and sum to one")
        for cov in self.covariances:
            mathcore.cholesky(cov)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shift = logits.max(axis=-1, keepdims=True)
    p = np.exp(logits - shift)
    return p / p.sum(axis=-1, keepdims=True)


def _gate_logits(x_star: np.ndarray, x: np.ndarray, transformed: np.ndarray) -> np.ndarray:
    """Log first-transition weights (up to a constant) under one gate draw.

    ``transformed`` is ``L @ A`` for the draw; the log-density of x* around each
    training input reduces to minus half the squared distance in the
    transformed coordinates (the log-determinant is shared and cancels).
    """
    diff = (x_star - x) @ transformed
    return -0.5 * np.sum(diff * diff, axis=1)


def posterior_predictive(x_star: np.ndarray, data: Dataset, state: VariationalState,
                         Ke: int, Kg: int, rng: np.random.Generator) -> GaussianMixture:
    """Monte Carlo posterior predictive density at ``x_star``.

    Draws ``Kg`` gate precision samples (Bartlett) and ``Ke`` independent
    parameter sets per expert, averages the softmax first-transition weights
    over the gate draws, and for each expert draw combines them with the
    softmax second-transition weights of every training output. The result is
    a mixture with exactly ``Ke * C`` components; the component for draw k and
    expert c has weight equal to the double average of the product of the two
    transition probabilities.
    """
    if Ke < 1 or Kg < 1:
        raise DomainError("Ke and Kg must be positive")
    x_star = np.asarray(x_star, dtype=float)
    if x_star.shape != (data.dx,):
        raise DimensionMismatch(f"x_star shape {x_star.shape} does not match dim {data.dx}")
    n, dy = data.n, data.dy
    c = len(state.experts)

    gate_mean = np.zeros(n)
    for _ in range(Kg):
        a = sample_bartlett_lower(data.dx, state.gate_eta, rng)
        gate_mean += _softmax_rows(_gate_logits(x_star, data.x, state.gate_L @ a))
    gate_mean /= Kg

    means = np.empty((Ke * c, dy))
    covs = np.empty((Ke * c, dy, dy))
    weights = np.empty(Ke * c)
    log_dens = np.empty((n, c))
    for k in range(Ke):
        mu_k = np.empty((c, dy))
        sigma_k = np.empty((c, dy, dy))
        for j in range(c):
            mu, sigma = sample_niw_batch(state.experts[j], rng, size=1)
            mu_k[j] = mu[0]
            sigma_k[j] = sigma[0]
            log_dens[:, j] = mathcore.mvn_logpdf(data.y, mu_k[j], sigma_k[j])
        expert_probs = _softmax_rows(log_dens)              # (N, C)
        block = slice(k * c, (k + 1) * c)
        weights[block] = gate_mean @ expert_probs / Ke
        means[block] = mu_k
        covs[block] = sigma_k
    return GaussianMixture(weights=weights, means=means, covariances=covs)


def mixture_logpdf(mixture: GaussianMixture, y: np.ndarray) -> float:
    """Log-density of a Gaussian mixture at one point, via log-sum-exp."""
    y = np.asarray(y, dtype=float)
    if y.shape != (mixture.dim,):
        raise DimensionMismatch(f"point shape {y.shape} does not match dim {mixture.dim}")
    return float(mixture_logpdf_many(mixture, y[None, :])[0])


def mixture_logpdf_many(mixture: GaussianMixture, points: np.ndarray,
                        chunk: int = 256) -> np.ndarray:
    """Vectorized mixture log-density over rows of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != mixture.dim:
        raise DimensionMismatch("point dimension does not match the mixture")
    logw = np.full(mixture.n_components, -np.inf)
    pos = mixture.weights > 0.0
    logw[pos] = np.log(mixture.weights[pos])
    out = np.full(points.shape[0], -np.inf)
    for start in range(0, mixture.n_components, chunk):
        stop = min(start + chunk, mixture.n_components)
        block = np.empty((stop - start, points.shape[0]))
        for i, comp in enumerate(range(start, stop)):
            block[i] = logw[comp] + mathcore.mvn_logpdf(points, mixture.means[comp],
                                                        mixture.covariances[comp])
        block_max = block.max(axis=0)
        safe = block_max > -np.inf
        lse = np.full(points.shape[0], -np.inf)
        lse[safe] = block_max[safe] + np.log(np.sum(np.exp(block[:, safe] - block_max[safe]),
                                                    axis=0))
        out = np.logaddexp(out, lse)
    return out


def mixture_sample(mixture: GaussianMixture, rng: np.random.Generator,
                   size: int | None = None) -> np.ndarray:
    """Draw(s) from a Gaussian mixture: categorical component, then Gaussian."""
    m = 1 if size is None else size
    comps = rng.choice(mixture.n_components, size=m, p=mixture.weights / mixture.weights.sum())
    out = np.empty((m, mixture.dim))
    chols = {}
    for i, comp in enumerate(comps):
        comp = int(comp)
        if comp not in chols:
            chols[comp] = mathcore.cholesky(mixture.covariances[comp])
        out[i] = mixture.means[comp] + chols[comp] @ rng.standard_normal(mixture.dim)
    return out[0] if size is None else out


@dataclass
class NWConfig:
    """Lengthscale and noise level of the kernel-regression baseline."""

    lengthscale: float
    noise_sd: float

    def validate(self):
        if not (self.lengthscale > 0.0 and self.noise_sd > 0.0):
            raise DomainError("lengthscale and noise_sd must be positive")


def nadaraya_watson(x_star: np.ndarray, data: Dataset, cfg: NWConfig):
    """Kernel-weighted mean prediction with radial basis weights.

    Returns the softmax-weighted average of the training outputs and the fixed
    predictive variance ``noise_sd ** 2``; the predictive density is that mean
    with isotropic Gaussian noise. Weights are computed in log domain, so they
    never all vanish.
    """
    cfg.validate()
    x_star = np.asarray(x_star, dtype=float)
    logits = -np.sum((data.x - x_star) ** 2, axis=1) / (2.0 * cfg.lengthscale ** 2)
    w = _softmax_rows(logits[None, :])[0]
    return w @ data.y, cfg.noise_sd ** 2


def fit_nw_config(data: Dataset) -> NWConfig:
    """Median-heuristic lengthscale and leave-one-out residual noise level."""
    d2 = np.sum((data.x[:, None, :] - data.x[None, :, :]) ** 2, axis=2)
    off = d2[~np.eye(data.n, dtype=bool)]
    lengthscale = math.sqrt(max(float(np.median(off)), 1e-12))
    resid = np.empty_like(data.y)
    for i in range(data.n):
        logits = -d2[i] / (2.0 * lengthscale ** 2)
        logits[i] = -np.inf
        w = _softmax_rows(logits[None, :])[0]
        resid[i] = data.y[i] - w @ data.y
    noise = math.sqrt(max(float(np.mean(resid ** 2)), 1e-12))
    return NWConfig(lengthscale=lengthscale, noise_sd=noise)
