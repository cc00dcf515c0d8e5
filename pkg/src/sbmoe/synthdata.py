"""Synthetic benchmark generators and samplers from their true conditionals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContextMismatch, DomainError
from .mathcore import sample_bartlett_lower
from .model import Dataset

_LOGNORMAL_COV = np.array([[1.0, 0.5], [0.5, 1.0]])
_PHI_CENTERS = 0.7 * np.arange(8)
_PHI_VAR = 4.0


@dataclass
class SynthSpec:
    """Which benchmark to draw, how many rows, and the seed."""

    which: str
    n: int
    seed: int

    def validate(self):
        if self.which not in ("oned", "twod"):
            raise DomainError(f"unknown benchmark {self.which!r}")
        if self.n < 1:
            raise DomainError("n must be positive")


def _correlated_lognormal(n: int, rng: np.random.Generator) -> np.ndarray:
    chol = np.linalg.cholesky(_LOGNORMAL_COV)
    return np.exp(rng.standard_normal((n, 2)) @ chol.T)


def gen_1d(n: int, seed: int) -> Dataset:
    """One-dimensional-output benchmark (Dx = 2, Dy = 1).

    Inputs are correlated bivariate log-normals; the output is
    ``log(zeta + 0.4 tau + 0.1)`` with ``zeta | x ~ Gamma(shape=x1, rate=x2)``
    and an independent Bernoulli(0.3) shift ``tau``, giving skewed and
    possibly bimodal conditionals. Draw order: normals, uniforms, gammas.
    """
    if n < 1:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(seed)
    x = _correlated_lognormal(n, rng)
    tau = (rng.random(n) < 0.3).astype(float)
    zeta = rng.gamma(shape=x[:, 0], scale=1.0 / x[:, 1])
    y = np.log(zeta + 0.4 * tau + 0.1)
    return Dataset(x=x, y=y[:, None])


def _spike_features(xi: np.ndarray) -> np.ndarray:
    """Normal density values (variance 4) at eight fixed points, per row of ``xi``."""
    norm = 1.0 / np.sqrt(2.0 * np.pi * _PHI_VAR)
    return norm * np.exp(-((_PHI_CENTERS[None, :] - xi[:, None]) ** 2) / (2.0 * _PHI_VAR))


def _dft_matrix(size: int = 8) -> np.ndarray:
    j, k = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    return np.exp(-2j * np.pi * j * k / size)


def _fourier_parts(xi: np.ndarray) -> np.ndarray:
    """Concatenated real and imaginary DFT bins of the spike features.

    The transform is carried out by direct summation against an explicit
    8 x 8 matrix of roots of unity.
    """
    f = _spike_features(xi) @ _dft_matrix()
    return np.hstack([f.real, f.imag])


def _iw_log_diagonals(eta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Log-diagonals of inverse-Wishart draws with scale A A^T, dof 3, per row.

    ``A = [[eta1, 0], [0.5, eta2]]``; each draw is realized as ``B B^T`` with
    ``B = A Abar^{-T}`` for a Bartlett factor ``Abar`` (degrees of freedom 3
    and 2, both integral), so no explicit inverse is formed.
    """
    m = eta.shape[0]
    scale = np.zeros((m, 2, 2))
    scale[:, 0, 0] = eta[:, 0]
    scale[:, 1, 0] = 0.5
    scale[:, 1, 1] = eta[:, 1]
    bart = sample_bartlett_lower(2, 3.0, rng, size=m)
    inv = np.linalg.solve(bart, np.broadcast_to(np.eye(2), (m, 2, 2)))
    b = scale @ np.swapaxes(inv, 1, 2)
    return np.log(np.sum(b * b, axis=2))


def gen_2d(n: int, seed: int):
    """Two-dimensional-output benchmark (Dx = 32, Dy = 2).

    A latent correlated log-normal pair is observed only through the
    concatenated real/imaginary Fourier bins of two spike vectors; the output
    holds the log-diagonals of an inverse-Wishart draw tied to the latents,
    with the second coordinate's sign flipped with probability one half.
    Returns the dataset together with the latent rows (needed to resample the
    true conditional). Draw order: normals, uniforms, Bartlett blocks.
    """
    if n < 1:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(seed)
    eta = _correlated_lognormal(n, rng)
    x = np.hstack([_fourier_parts(eta[:, 0]), _fourier_parts(eta[:, 1])])
    tau = (rng.random(n) < 0.5).astype(float)
    logd = _iw_log_diagonals(eta, rng)
    y = np.column_stack([logd[:, 0], (2.0 * tau - 1.0) * logd[:, 1]])
    return Dataset(x=x, y=y), eta


def generate(spec: SynthSpec):
    """Dispatch on ``spec.which``; returns ``(dataset, context_rows or None)``."""
    spec.validate()
    if spec.which == "oned":
        return gen_1d(spec.n, spec.seed), None
    data, eta = gen_2d(spec.n, spec.seed)
    return data, eta


def true_conditional_samples(which: str, context: np.ndarray, m: int, seed: int) -> np.ndarray:
    """Independent output draws from the true conditional at one context.

    For ``oned`` the context is the two-dimensional input itself; for ``twod``
    it is the latent pair recorded alongside the dataset at generation time.
    The conditioning values are held fixed while the remaining randomness is
    resampled.
    """
    context = np.asarray(context, dtype=float).ravel()
    if m < 1:
        raise DomainError("m must be positive")
    rng = np.random.default_rng(seed)
    if which == "oned":
        if context.shape != (2,):
            raise ContextMismatch(f"oned context must be the 2-vector input, got shape {context.shape}")
        tau = (rng.random(m) < 0.3).astype(float)
        zeta = rng.gamma(shape=context[0], scale=1.0 / context[1], size=m)
        return np.log(zeta + 0.4 * tau + 0.1)[:, None]
    if which == "twod":
        if context.shape != (2,):
            raise ContextMismatch("twod context must carry the two latent values "
                                  "recorded by the generator")
        tau = (rng.random(m) < 0.5).astype(float)
        logd = _iw_log_diagonals(np.broadcast_to(context, (m, 2)).copy(), rng)
        return np.column_stack([logd[:, 0], (2.0 * tau - 1.0) * logd[:, 1]])
    raise DomainError(f"unknown benchmark {which!r}")
