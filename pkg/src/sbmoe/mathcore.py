"""Dense linear algebra, special functions and distribution primitives.

Everything here is pure given its inputs and an explicit ``numpy.random.Generator``;
no global random state is touched, so draws are reproducible per stream and
independent streams can be spawned from a root ``SeedSequence``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, DomainError, NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        If a pivot is nonpositive (the matrix is not positive definite).
    DimensionMismatch
        If ``a`` is not square.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def log_det_pd(a: np.ndarray) -> float:
    """log-determinant of a positive definite matrix via its Cholesky factor."""
    return 2.0 * float(np.sum(np.log(np.diag(cholesky(a)))))


def solve_pd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for positive definite ``a`` through two triangular solves."""
    chol = cholesky(a)
    z = solve_triangular(chol, b, lower=True)
    return solve_triangular(chol.T, z, lower=False)


def inv_pd(a: np.ndarray) -> np.ndarray:
    """Inverse of a positive definite matrix, computed by Cholesky solves."""
    return solve_pd(a, np.eye(a.shape[0]))


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

# Bernoulli-number coefficients of the asymptotic series for psi(x).
_PSI_ASYMPTOTIC = (
    -1.0 / 12.0,
    1.0 / 120.0,
    -1.0 / 252.0,
    1.0 / 240.0,
    -1.0 / 132.0,
    691.0 / 32760.0,
)


def digamma(x):
    """Digamma function, accurate to better than 1e-10 for positive arguments.

    Uses the recurrence ``psi(x) = psi(x + 1) - 1/x`` to shift the argument
    above 10, then the standard asymptotic series. Accepts scalars or arrays.

    Raises
    ------
    DomainError
        If any argument is nonpositive.
    """
    arr = np.array(x, dtype=float, copy=True)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.any(arr <= 0.0) or np.any(~np.isfinite(arr)):
        raise DomainError("digamma requires strictly positive finite arguments")
    acc = np.zeros_like(arr)
    mask = arr < 10.0
    while np.any(mask):
        acc[mask] -= 1.0 / arr[mask]
        arr[mask] += 1.0
        mask = arr < 10.0
    inv2 = 1.0 / (arr * arr)
    series = np.zeros_like(arr)
    power = inv2.copy()
    for coeff in _PSI_ASYMPTOTIC:
        series += coeff * power
        power *= inv2
    out = acc + np.log(arr) - 0.5 / arr + series
    return float(out[0]) if scalar else out


def digamma_half_sum(a: float, d: int) -> float:
    """``sum_{i=1..d} psi((a + 1 - i) / 2)``, the term attached to E[log det]."""
    return float(np.sum(digamma((a + 1.0 - np.arange(1, d + 1)) / 2.0)))


def multivariate_log_gamma(d: int, a: float) -> float:
    """Logarithm of the multivariate gamma function ``Gamma_d(a)``.

    Uses the product-of-univariate-gammas identity. Requires ``a > (d - 1)/2``.
    """
    if d < 1:
        raise DomainError("dimension must be a positive integer")
    if a <= (d - 1) / 2.0:
        raise DomainError(f"multivariate_log_gamma requires a > (d-1)/2, got a={a}, d={d}")
    out = d * (d - 1) / 4.0 * math.log(math.pi)
    for i in range(1, d + 1):
        out += math.lgamma(a + (1 - i) / 2.0)
    return out


# ---------------------------------------------------------------------------
# Gaussian density
# ---------------------------------------------------------------------------

def mvn_logpdf(y: np.ndarray, mu: np.ndarray, sigma: np.ndarray):
    """Multivariate normal log-density via Cholesky solve.

    ``y`` may be a single vector of length d or an array of shape (m, d), in
    which case one log-density per row is returned.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    d = mu.shape[0]
    if sigma.shape != (d, d):
        raise DimensionMismatch(f"covariance shape {sigma.shape} does not match mean length {d}")
    if y.shape[-1] != d:
        raise DimensionMismatch(f"point shape {y.shape} does not match mean length {d}")
    chol = cholesky(sigma)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    z = solve_triangular(chol, (y - mu).T, lower=True)
    quad = np.sum(z * z, axis=0)
    out = -0.5 * (d * LOG_2PI + log_det + quad)
    return float(out) if y.ndim == 1 else out


# ---------------------------------------------------------------------------
# Wishart / normal-inverse-Wishart sampling (Bartlett construction)
# ---------------------------------------------------------------------------

def sample_bartlett_lower(d: int, eta: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Lower-triangular Bartlett factor(s) ``A`` of a standard Wishart draw.

    ``A`` has ``A_ii^2 ~ chi2(eta + 1 - i)`` and independent standard normal
    strict lower entries, so ``A A^T ~ W(I, eta)``. Draw order is fixed
    (diagonal chi-squares first, then row-major off-diagonals) so results are
    deterministic per stream. Requires ``eta > d - 1`` for positive degrees
    of freedom.
    """
    if eta <= d - 1:
        raise DomainError(f"Bartlett factor requires eta > d - 1, got eta={eta}, d={d}")
    dofs = eta - np.arange(d)
    m = 1 if size is None else size
    a = np.zeros((m, d, d))
    diag = np.sqrt(rng.chisquare(df=dofs, size=(m, d)))
    a[:, np.arange(d), np.arange(d)] = diag
    if d > 1:
        rows, cols = np.tril_indices(d, k=-1)
        a[:, rows, cols] = rng.standard_normal((m, rows.size))
    return a[0] if size is None else a


def sample_wishart_bartlett(chol_scale: np.ndarray, eta: float, rng: np.random.Generator) -> np.ndarray:
    """One draw from ``W(L L^T, eta)`` given the lower Cholesky factor ``L``.

    Requires ``eta >= d`` so that every chi-square degree of freedom is at
    least one. The draw is ``(L A)(L A)^T`` with ``A`` a Bartlett factor.
    """
    d = chol_scale.shape[0]
    if eta < d:
        raise DomainError(f"Wishart sampling requires eta >= d, got eta={eta}, d={d}")
    m = chol_scale @ sample_bartlett_lower(d, eta, rng)
    return m @ m.T


@dataclass
class NIWParams:
    """Parameters of a normal-inverse-Wishart distribution.

    ``Sigma ~ IW(Sigma, nu)`` and ``mu | Sigma ~ N(mu, Sigma / kappa)``.
    """

    mu: np.ndarray
    kappa: float
    Sigma: np.ndarray
    nu: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        self.kappa = float(self.kappa)
        self.nu = float(self.nu)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def validate(self):
        d = self.dim
        if self.Sigma.shape != (d, d):
            raise DimensionMismatch(f"scale shape {self.Sigma.shape} does not match mean length {d}")
        if not self.kappa > 0.0:
            raise DomainError(f"kappa must be positive, got {self.kappa}")
        if not self.nu > d - 1:
            raise DomainError(f"nu must exceed d - 1 = {d - 1}, got {self.nu}")
        cholesky(self.Sigma)  # raises NotPositiveDefinite


def _inverse_wishart_sqrt(chol_scale: np.ndarray, nu: float, rng: np.random.Generator,
                          size: int | None = None) -> np.ndarray:
    """Matrix square root(s) B with ``B B^T ~ IW(M M^T, nu)`` for lower ``M``.

    Algebraically the inverse of a Bartlett Wishart draw with scale
    ``(M M^T)^{-1}``: if ``A`` is a Bartlett factor then
    ``(M A^{-T})(M A^{-T})^T = M (A A^T)^{-1} M^T`` is inverse-Wishart
    distributed, and no explicit matrix inverse is ever formed.
    """
    d = chol_scale.shape[0]
    a = sample_bartlett_lower(d, nu, rng, size=1 if size is None else size)
    eye = np.broadcast_to(np.eye(d), a.shape)
    a_inv = np.linalg.solve(a, eye)
    b = chol_scale @ np.swapaxes(a_inv, -1, -2)
    return b[0] if size is None else b


def sample_niw(p: NIWParams, rng: np.random.Generator, require_mean: bool = False):
    """One draw ``(mu, Sigma)`` from a normal-inverse-Wishart distribution.

    ``Sigma`` is drawn as the inverse of a Bartlett Wishart draw with scale
    ``p.Sigma^{-1}``, then ``mu | Sigma ~ N(p.mu, Sigma / p.kappa)``. Draw
    order (Bartlett factor, then the normal vector) is fixed per stream.

    With ``require_mean=True`` the call insists that the inverse-Wishart mean
    exists, i.e. ``nu > d + 1``; tests of moment identities rely on this.
    """
    p.validate()
    d = p.dim
    if require_mean and not p.nu > d + 1:
        raise DomainError(f"inverse-Wishart mean requires nu > d + 1, got nu={p.nu}")
    b = _inverse_wishart_sqrt(cholesky(p.Sigma), p.nu, rng)
    sigma = b @ b.T
    mu = p.mu + (b @ rng.standard_normal(d)) / math.sqrt(p.kappa)
    return mu, sigma


def sample_niw_batch(p: NIWParams, rng: np.random.Generator, size: int):
    """Vectorized ``sample_niw``: returns arrays of shapes (size, d) and (size, d, d)."""
    p.validate()
    d = p.dim
    b = _inverse_wishart_sqrt(cholesky(p.Sigma), p.nu, rng, size=size)
    sigma = b @ np.swapaxes(b, -1, -2)
    z = rng.standard_normal((size, d, 1))
    mu = p.mu + (b @ z)[..., 0] / math.sqrt(p.kappa)
    return mu, sigma


def niw_expectations(p: NIWParams, y: np.ndarray):
    """The three conjugate expectations of a normal-inverse-Wishart distribution.

    Returns ``(E[Sigma^{-1}], E[log det Sigma], E[(y - mu)^T Sigma^{-1} (y - mu)])``:

    - ``E[Sigma^{-1}] = nu * Sigma^{-1}``
    - ``E[log det Sigma] = -sum_i psi((nu + 1 - i)/2) - d log 2 + log det Sigma``
    - ``E[quad] = d / kappa + nu * (y - mu)^T Sigma^{-1} (y - mu)``
    """
    p.validate()
    y = np.asarray(y, dtype=float)
    d = p.dim
    if y.shape != (d,):
        raise DimensionMismatch(f"y shape {y.shape} does not match dimension {d}")
    chol = cholesky(p.Sigma)
    sigma_inv = solve_triangular(chol.T, solve_triangular(chol, np.eye(d), lower=True), lower=False)
    e_inv_scale = p.nu * sigma_inv
    e_logdet = -digamma_half_sum(p.nu, d) - d * math.log(2.0) + 2.0 * float(np.sum(np.log(np.diag(chol))))
    z = solve_triangular(chol, y - p.mu, lower=True)
    e_mahalanobis = d / p.kappa + p.nu * float(z @ z)
    return e_inv_scale, e_logdet, e_mahalanobis


def wishart_expected_logdet(log_det_scale: float, eta: float, d: int) -> float:
    """``E[log det W]`` for ``W ~ W(V, eta)`` given ``log det V``."""
    return digamma_half_sum(eta, d) + d * math.log(2.0) + log_det_scale
