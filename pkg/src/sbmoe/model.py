"""Data model: observations, priors, fit configuration and variational state."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from . import mathcore
from .errors import DimensionMismatch, DomainError, NonFiniteError
from .mathcore import NIWParams


@dataclass
class Dataset:
    """Paired input rows (N x Dx) and output rows (N x Dy).

    A single observation is enough for prediction-side utilities; fitting
    requires at least two observations since the model is built on pairs of
    distinct points.
    """

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionMismatch(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}")
        if self.x.shape[0] < 1 or self.x.shape[1] < 1 or self.y.shape[1] < 1:
            raise DimensionMismatch("dataset must have at least one row and one column per side")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise NonFiniteError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dx(self) -> int:
        return self.x.shape[1]

    @property
    def dy(self) -> int:
        return self.y.shape[1]


@dataclass
class Hyperparameters:
    """Prior constants of the gate Wishart and the expert normal-inverse-Wisharts."""

    Lambda0: np.ndarray
    eta0: float
    mu0: np.ndarray
    kappa0: float
    Sigma0: np.ndarray
    nu0: float
    C: int

    def __post_init__(self):
        self.Lambda0 = np.asarray(self.Lambda0, dtype=float)
        self.mu0 = np.asarray(self.mu0, dtype=float)
        self.Sigma0 = np.asarray(self.Sigma0, dtype=float)
        self.eta0 = float(self.eta0)
        self.kappa0 = float(self.kappa0)
        self.nu0 = float(self.nu0)
        self.C = int(self.C)

    def validate(self, data: Dataset | None = None):
        dx = self.Lambda0.shape[0]
        dy = self.mu0.shape[0]
        if self.Lambda0.shape != (dx, dx) or self.Sigma0.shape != (dy, dy):
            raise DimensionMismatch("prior scale matrices must be square and consistent")
        # eta0 >= dx keeps every Bartlett chi-square degree of freedom >= 1.
        if self.eta0 < dx:
            raise DomainError(f"eta0 must be at least dim x = {dx}, got {self.eta0}")
        if not self.nu0 > dy - 1:
            raise DomainError(f"nu0 must exceed dim y - 1 = {dy - 1}, got {self.nu0}")
        if not self.kappa0 > 0:
            raise DomainError(f"kappa0 must be positive, got {self.kappa0}")
        if self.C < 1:
            raise DomainError(f"C must be a positive integer, got {self.C}")
        mathcore.cholesky(self.Lambda0)
        mathcore.cholesky(self.Sigma0)
        if data is not None:
            if data.dx != dx or data.dy != dy:
                raise DimensionMismatch("hyperparameter dimensions do not match the dataset")
            if self.C > data.n:
                raise DomainError(f"C = {self.C} exceeds the number of observations {data.n}")


@dataclass
class Responsibilities:
    """Variational joint posterior masses over (expert c, neighbor n') per point n.

    ``omega`` has shape (C, N, N) with a structurally zero diagonal in the
    (n, n') plane; for every n the entries over (c, n') sum to one.
    """

    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)

    @property
    def Omega(self) -> np.ndarray:
        """Marginal neighbor masses ``Omega[n, n'] = sum_c omega[c, n, n']``."""
        return self.omega.sum(axis=0)

    def validate(self):
        c, n, n2 = self.omega.shape
        if n != n2:
            raise DimensionMismatch(f"omega must be (C, N, N), got {self.omega.shape}")
        if np.any(self.omega < 0.0):
            raise DomainError("responsibilities must be nonnegative")
        diag = self.omega[:, np.arange(n), np.arange(n)]
        if np.any(diag != 0.0):
            raise DomainError("responsibilities must have a zero diagonal in (n, n')")
        totals = self.omega.sum(axis=(0, 2))
        if np.any(np.abs(totals - 1.0) > 1e-9):
            raise DomainError("responsibilities must sum to one per point")


@dataclass
class Linearization:
    """Softmax-transformed linearization locations for the two log-sum-exp terms.

    Rows of ``s`` (N x C) and off-diagonal rows of ``t`` (N x N, zero diagonal)
    lie on the probability simplex.
    """

    s: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.t = np.asarray(self.t, dtype=float)

    def validate(self):
        if np.any(self.s < 0.0) or np.any(np.abs(self.s.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError("rows of s must lie on the probability simplex")
        n = self.t.shape[0]
        if self.t.shape != (n, n):
            raise DimensionMismatch(f"t must be square, got {self.t.shape}")
        if np.any(np.diag(self.t) != 0.0):
            raise DomainError("t must have a zero diagonal")
        if np.any(self.t < 0.0) or np.any(np.abs(self.t.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError("off-diagonal rows of t must lie on the probability simplex")


@dataclass
class VariationalState:
    """Full variational posterior state manipulated by the fit loop."""

    experts: list[NIWParams]
    gate_L: np.ndarray
    gate_eta: float
    resp: Responsibilities
    lin: Linearization

    def copy(self) -> "VariationalState":
        return VariationalState(
            experts=[replace(e, mu=e.mu.copy(), Sigma=e.Sigma.copy()) for e in self.experts],
            gate_L=self.gate_L.copy(),
            gate_eta=self.gate_eta,
            resp=Responsibilities(self.resp.omega.copy()),
            lin=Linearization(self.lin.s.copy(), self.lin.t.copy()),
        )


@dataclass
class FitConfig:
    """Run controls for the variational fit."""

    iterations: int = 20
    gate_subiterations: int = 50
    gate_mc_samples: int = 8
    adam_learning_rate: float = 0.01
    r_floor: float = 1e-8
    eig_floor: float = 1e-6
    predictive_Ke: int = 64
    predictive_Kg: int = 64
    seed: int = 0
    gate_mode: str = "stochastic"

    def validate(self):
        if self.iterations < 0:
            raise DomainError("iterations must be nonnegative")
        for name in ("gate_subiterations", "gate_mc_samples", "predictive_Ke", "predictive_Kg"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be a positive integer")
        for name in ("adam_learning_rate", "r_floor", "eig_floor"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")
        if self.gate_mode not in ("stochastic", "closed_projected"):
            raise DomainError(f"unknown gate_mode {self.gate_mode!r}")


def default_hyperparameters(data: Dataset, C: int) -> Hyperparameters:
    """Empirical-Bayes style default priors.

    ``mu0`` is the output sample mean; ``Sigma0`` is the diagonal output
    covariance scaled so that the prior inverse-Wishart mean equals it with
    ``nu0 = Dy + 2``; ``Lambda0`` is chosen so that ``E[Lambda] = eta0 * Lambda0``
    equals the inverse diagonal input covariance with ``eta0 = Dx + 2``.
    Zero-variance coordinates are jittered by 1e-8 with a warning.
    """
    if not 1 <= C <= data.n:
        raise DomainError(f"C must be between 1 and N = {data.n}, got {C}")
    var_x = np.var(data.x, axis=0)
    var_y = np.var(data.y, axis=0)
    if np.any(var_x == 0.0) or np.any(var_y == 0.0):
        warnings.warn("constant data coordinate; adding 1e-8 jitter to its variance")
        var_x = np.maximum(var_x, 1e-8)
        var_y = np.maximum(var_y, 1e-8)
    nu0 = data.dy + 2.0
    eta0 = data.dx + 2.0
    return Hyperparameters(
        Lambda0=np.diag(1.0 / var_x) / eta0,
        eta0=eta0,
        mu0=data.y.mean(axis=0),
        kappa0=0.01,
        Sigma0=np.diag(var_y) * (nu0 - data.dy - 1.0),
        nu0=nu0,
        C=C,
    )


def _standardize(x: np.ndarray) -> np.ndarray:
    sd = np.std(x, axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    return (x - x.mean(axis=0)) / sd


def _farthest_point_labels(x_std: np.ndarray, C: int) -> np.ndarray:
    """Greedy k-center seeding, used when hierarchical clustering degenerates."""
    n = x_std.shape[0]
    centers = [0]
    d2 = np.sum((x_std - x_std[0]) ** 2, axis=1)
    for _ in range(1, C):
        nxt = int(np.argmax(d2))
        centers.append(nxt)
        d2 = np.minimum(d2, np.sum((x_std - x_std[nxt]) ** 2, axis=1))
    dists = np.sum((x_std[:, None, :] - x_std[None, centers, :]) ** 2, axis=2)
    labels = np.argmin(dists, axis=1)
    labels[centers] = np.arange(C)  # keep every cluster non-empty under ties
    return labels


def init_state(data: Dataset, hp: Hyperparameters, seed: int = 0) -> VariationalState:
    """Initial variational state.

    Inputs are standardized and grouped by Ward-linkage agglomerative
    clustering into C clusters; each expert mean starts at the output mean of
    one cluster while all remaining expert parameters start at the prior.
    Linearization rows and responsibilities start uniform. Falls back to
    farthest-point seeding if the clustering cannot produce C clusters.
    """
    hp.validate(data)
    n, c = data.n, hp.C
    if n < 2:
        raise DomainError("fitting requires at least two observations")
    x_std = _standardize(data.x)
    if c == 1:
        labels = np.zeros(n, dtype=int)
    elif c == n:
        labels = np.arange(n)
    else:
        merge_tree = linkage(x_std, method="ward")
        labels = fcluster(merge_tree, t=c, criterion="maxclust") - 1
        if np.unique(labels).size < c:
            labels = _farthest_point_labels(x_std, c)
    means = np.empty((c, data.dy))
    for k in range(c):
        members = labels == k
        if not np.any(members):
            raise DomainError("empty cluster after fallback seeding")
        means[k] = data.y[members].mean(axis=0)

    experts = [NIWParams(mu=means[k], kappa=hp.kappa0, Sigma=hp.Sigma0.copy(), nu=hp.nu0)
               for k in range(c)]
    omega = np.full((c, n, n), 1.0 / (c * (n - 1)))
    omega[:, np.arange(n), np.arange(n)] = 0.0
    t = np.full((n, n), 1.0 / (n - 1))
    np.fill_diagonal(t, 0.0)
    return VariationalState(
        experts=experts,
        gate_L=mathcore.cholesky(hp.Lambda0),
        gate_eta=hp.eta0,
        resp=Responsibilities(omega),
        lin=Linearization(s=np.full((n, c), 1.0 / c), t=t),
    )
