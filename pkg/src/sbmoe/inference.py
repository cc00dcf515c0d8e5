"""Mean-field variational Bayes fit loop.

One outer iteration updates, in order: the linearization rows ``s`` (and ``t``
when the closed/projected gate is used), the responsibilities (E-step), the
expert posteriors (M-step I), and the gate posterior (M-step II, either the
closed projected update or the stochastic reparameterized one).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import mathcore
from .errors import NonFiniteError, NotPositiveDefinite
from .mathcore import (LOG_2PI, NIWParams, digamma_half_sum, multivariate_log_gamma,
                       sample_bartlett_lower, wishart_expected_logdet)
from .model import (Dataset, FitConfig, Hyperparameters, Linearization,
                    Responsibilities, VariationalState, init_state)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GATE_DIAG_FLOOR = 1e-10


@dataclass
class ElboRecord:
    iteration: int
    elbo: float
    gate_objective: float
    wall_time: float


@dataclass
class ElboTrace:
    """Per-iteration monitoring records (the bound is not guaranteed monotone)."""

    records: list[ElboRecord] = field(default_factory=list)

    def elbo_values(self) -> np.ndarray:
        return np.array([r.elbo for r in self.records])


# ---------------------------------------------------------------------------
# shared expert/gate precomputations
# ---------------------------------------------------------------------------

class _ExpertStats:
    """Per-expert quantities reused across the E-step, the LPs and the ELBO."""

    def __init__(self, experts: list[NIWParams]):
        self.nu = np.array([e.nu for e in experts])
        self.kappa = np.array([e.kappa for e in experts])
        self.mu = np.stack([e.mu for e in experts])
        self.chols = [mathcore.cholesky(e.Sigma) for e in experts]
        self.logdet = np.array([2.0 * np.sum(np.log(np.diag(c))) for c in self.chols])
        self.dgsum = np.array([digamma_half_sum(e.nu, e.mu.shape[0]) for e in experts])
        self.dy = experts[0].mu.shape[0]

    def mahalanobis(self, y: np.ndarray) -> np.ndarray:
        """(N, C) matrix of (y_n - mu_c)^T Sigma_c^{-1} (y_n - mu_c)."""
        out = np.empty((y.shape[0], len(self.chols)))
        for c, chol in enumerate(self.chols):
            z = solve_triangular(chol, (y - self.mu[c]).T, lower=True)
            out[:, c] = np.sum(z * z, axis=0)
        return out


def _pairwise_sq_dists(v: np.ndarray) -> np.ndarray:
    """All pairwise squared Euclidean distances between rows of ``v``."""
    sq = np.sum(v * v, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (v @ v.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _pair_quadratic(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_{n, n'} w[n, n'] (x_n - x_n')(x_n - x_n')^T`` without forming pairs.

    Expands to the graph-Laplacian form ``X^T (D_r + D_c - W - W^T) X`` where
    the diagonals hold row and column sums of ``w``.
    """
    m = -(w + w.T)
    m[np.diag_indices_from(m)] += w.sum(axis=1) + w.sum(axis=0)
    return x.T @ (m @ x)


def expected_log_normal(expert: NIWParams, y: np.ndarray) -> float:
    """Posterior expectation of a Gaussian log-density at ``y`` under one expert.

    The additive constant ``-(dim Y / 2) log pi`` is omitted consistently; the
    value is only ever compared across experts at fixed ``y``.
    """
    d = expert.mu.shape[0]
    chol = mathcore.cholesky(expert.Sigma)
    z = solve_triangular(chol, np.asarray(y, dtype=float) - expert.mu, lower=True)
    return (0.5 * digamma_half_sum(expert.nu, d)
            - float(np.sum(np.log(np.diag(chol))))
            - 0.5 * d / expert.kappa
            - 0.5 * expert.nu * float(z @ z))


def _expected_log_normal_matrix(stats: _ExpertStats, y: np.ndarray) -> np.ndarray:
    """(N, C) matrix of ``expected_log_normal`` values, constant omitted."""
    maha = stats.mahalanobis(y)
    return (0.5 * stats.dgsum - 0.5 * stats.logdet - 0.5 * stats.dy / stats.kappa
            - 0.5 * stats.nu * maha)


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def e_step(data: Dataset, hp: Hyperparameters, state: VariationalState) -> Responsibilities:
    """Responsibility update.

    Computes the unnormalized log-masses over (expert, neighbor) for every
    point — digamma and log-determinant terms, conjugate Mahalanobis
    expectations of both endpoints against each expert, the s-weighted
    correction for the neighbor, and the gate quadratic with its t-weighted
    correction — then normalizes per point with a max-subtracted softmax.
    """
    n, dy = data.n, data.dy
    stats = _ExpertStats(state.experts)
    maha = stats.mahalanobis(data.y)                       # (N, C)
    s, t = state.lin.s, state.lin.t

    alpha = stats.dgsum - stats.logdet - dy / stats.kappa  # (C,)
    beta = -0.5 * stats.nu[None, :] * maha                 # (N, C)
    corr = (-0.5 * stats.dgsum + 0.5 * stats.logdet + 0.5 * dy / stats.kappa)[None, :] \
        + 0.5 * stats.nu[None, :] * maha
    g = np.sum(s * corr, axis=1)                            # (N,)

    v = data.x @ state.gate_L
    d2 = _pairwise_sq_dists(v)
    eta = state.gate_eta
    gate = -0.5 * eta * d2
    gate_const = 0.5 * eta * np.sum(t * d2, axis=1)         # constant per point

    logw = beta.T[:, :, None] + beta.T[:, None, :]          # (C, N, N)
    logw += alpha[:, None, None]
    logw += (gate + g[None, :] + gate_const[:, None])[None, :, :]
    if np.isnan(logw).any():
        raise NonFiniteError("non-finite log responsibility weight")
    idx = np.arange(n)
    logw[:, idx, idx] = -np.inf

    shift = logw.max(axis=(0, 2))                           # (N,)
    logw -= shift[None, :, None]
    np.exp(logw, out=logw)
    logw /= logw.sum(axis=(0, 2))[None, :, None]
    return Responsibilities(logw)


# ---------------------------------------------------------------------------
# M-step I (experts) and the s / t linear programs
# ---------------------------------------------------------------------------

def expert_weights(omega: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Raw per-point expert weights ``r[n, c]`` before flooring.

    ``r[n, c] = sum_{n' != n} (omega[c, n, n'] + omega[c, n', n] - s[n, c] * Omega[n', n])``.
    """
    rowsum = omega.sum(axis=2).T                            # (N, C)
    colsum = omega.sum(axis=1).T
    omega_col = omega.sum(axis=(0, 1))                      # (N,)
    return rowsum + colsum - s * omega_col[:, None]


def m_step_experts(data: Dataset, hp: Hyperparameters, resp: Responsibilities,
                   s: np.ndarray, r_floor: float = 1e-8) -> list[NIWParams]:
    """Expert posterior update.

    The raw weights are floored at ``r_floor`` (which keeps every scale matrix
    positive definite), the totals recomputed from the floored values, and the
    four conjugate closed forms applied verbatim.
    """
    r = np.maximum(expert_weights(resp.omega, s), r_floor)  # (N, C)
    big_r = r.sum(axis=0)                                   # (C,)
    kappa = hp.kappa0 + big_r
    nu = hp.nu0 + big_r
    mu = (hp.kappa0 * hp.mu0[None, :] + r.T @ data.y) / kappa[:, None]
    base = hp.Sigma0 + hp.kappa0 * np.outer(hp.mu0, hp.mu0)
    experts = []
    for c in range(r.shape[1]):
        scatter = (data.y * r[:, c:c + 1]).T @ data.y
        sigma = base - kappa[c] * np.outer(mu[c], mu[c]) + scatter
        sigma = 0.5 * (sigma + sigma.T)
        try:
            mathcore.cholesky(sigma)
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(f"expert {c} scale lost positive definiteness") from exc
        experts.append(NIWParams(mu=mu[c], kappa=kappa[c], Sigma=sigma, nu=nu[c]))
    return experts


def greedy_bounded_simplex_min(coeff: np.ndarray, bound: np.ndarray) -> np.ndarray:
    """Exact row-wise minimizer of a linear function over the bounded simplex.

    For each row, minimizes ``sum_c s_c * coeff_c`` over ``{s >= 0, sum s = 1,
    s <= bound}``: the single equality plus box constraints make the greedy
    fractional-knapsack rule exact — allocate each coordinate its bound in
    ascending coefficient order until total mass one is reached, the last one
    taking the remainder; ties break toward the lower index.
    """
    coeff = np.atleast_2d(np.asarray(coeff, dtype=float))
    bound = np.atleast_2d(np.asarray(bound, dtype=float))
    order = np.argsort(coeff, axis=1, kind="stable")
    sorted_bound = np.take_along_axis(bound, order, axis=1)
    used_before = np.cumsum(sorted_bound, axis=1) - sorted_bound
    alloc = np.clip(1.0 - used_before, 0.0, sorted_bound)
    s = np.empty_like(alloc)
    np.put_along_axis(s, order, alloc, axis=1)
    return s


def update_s(data: Dataset, experts: list[NIWParams], resp: Responsibilities) -> np.ndarray:
    """Row-wise exact solution of the bounded linear program for ``s``.

    Each row minimizes ``sum_c s[n, c] * E log N(y_n | mu_c, Sigma_c)`` over the
    simplex subject to ``s[n, c] <= (row + column responsibility mass of c at n)
    / (total incoming mass at n)``; the bounds provably sum above one, so the
    program is always feasible.
    """
    stats = _ExpertStats(experts)
    coeff = _expected_log_normal_matrix(stats, data.y)
    omega = resp.omega
    rowsum = omega.sum(axis=2).T
    colsum = omega.sum(axis=1).T
    denom = np.maximum(omega.sum(axis=(0, 1)), 1e-300)
    bound = (rowsum + colsum) / denom[:, None]
    assert np.all(bound.sum(axis=1) > 1.0 - 1e-12), "LP bounds must sum above one"
    return greedy_bounded_simplex_min(coeff, bound)


def update_t(data: Dataset, state: VariationalState) -> np.ndarray:
    """Row-wise exact solution of the unconstrained-simplex program for ``t``.

    The coefficient of neighbor n' is the gate-posterior expectation of
    ``log N(x_n | x_n', Lambda^{-1})``; minimizing a linear function over the
    simplex puts each row one-hot at the smallest coefficient (ties toward the
    lower index). Only consumed by the E-step and the closed/projected gate.
    """
    n, dx = data.n, data.dx
    v = data.x @ state.gate_L
    d2 = _pairwise_sq_dists(v)
    e_logdet = wishart_expected_logdet(
        2.0 * float(np.sum(np.log(np.diag(state.gate_L)))), state.gate_eta, dx)
    coeff = -0.5 * dx * LOG_2PI + 0.5 * e_logdet - 0.5 * state.gate_eta * d2
    np.fill_diagonal(coeff, np.inf)
    t = np.zeros((n, n))
    t[np.arange(n), np.argmin(coeff, axis=1)] = 1.0
    return t


# ---------------------------------------------------------------------------
# M-step II (gate)
# ---------------------------------------------------------------------------

def m_step_gate_closed(data: Dataset, hp: Hyperparameters, resp: Responsibilities,
                       t: np.ndarray, eig_floor: float = 1e-6) -> np.ndarray:
    """Closed-form gate update with eigenvalue projection.

    Forms the inverse scale ``Lambda0^{-1} + sum (Omega - t) (dx)(dx)^T``,
    clamps its eigenvalues at ``eig_floor`` (the correction weights can be
    negative, so positive definiteness is not guaranteed), and returns the
    Cholesky factor of the inverse of the clamped matrix.
    """
    inv_scale = mathcore.inv_pd(hp.Lambda0) + _pair_quadratic(data.x, resp.Omega - t)
    inv_scale = 0.5 * (inv_scale + inv_scale.T)
    vals, vecs = np.linalg.eigh(inv_scale)
    vals = np.maximum(vals, eig_floor)
    lam = (vecs / vals[None, :]) @ vecs.T
    return mathcore.cholesky(0.5 * (lam + lam.T))


def _gate_value_grad(x: np.ndarray, b: np.ndarray, eta0: float, chol_gate: np.ndarray,
                     draws: np.ndarray):
    """Objective value and lower-triangular gradient for fixed Bartlett draws."""
    diag = np.diag(chol_gate)
    if np.any(diag <= 0.0):
        raise NonFiniteError("gate factor lost a positive diagonal")
    value = -eta0 * float(np.sum(np.log(diag)))
    bl = b @ chol_gate
    value += 0.5 * eta0 * float(np.sum(chol_gate * bl))
    grad = -eta0 * np.diag(1.0 / diag) + eta0 * bl

    mc_value = 0.0
    mc_grad = np.zeros_like(chol_gate)
    for a in draws:
        v = x @ (chol_gate @ a)
        d2 = _pairwise_sq_dists(v)
        logits = -0.5 * d2
        np.fill_diagonal(logits, -np.inf)
        shift = logits.max(axis=1)
        p = np.exp(logits - shift[:, None])
        totals = p.sum(axis=1)
        mc_value += float(np.sum(shift + np.log(totals)))
        p /= totals[:, None]
        mc_grad -= _pair_quadratic(x, p) @ chol_gate @ (a @ a.T)
    m = len(draws)
    value += mc_value / m
    grad += mc_grad / m
    grad = np.tril(grad)
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise NonFiniteError("gate objective overflowed; the factor is exploding")
    return value, grad


def gate_objective_and_gradient(data: Dataset, hp: Hyperparameters, resp: Responsibilities,
                                chol_gate: np.ndarray, mc_samples: int,
                                rng: np.random.Generator):
    """Monte Carlo gate objective and its reparameterized gradient.

    The objective is ``-eta0 log det L + sum_n E_A[logsumexp_{n' != n}
    (-(x_n - x_n')^T L A A^T L^T (x_n - x_n') / 2)] + (eta0 / 2) tr(L^T (Lambda0^{-1}
    + sum Omega (dx)(dx)^T) L)``; the Bartlett draws ``A`` are parameter-free, so
    the gradient flows through ``L`` with the draws held fixed. Deterministic
    given the stream state (a fixed number of draws is consumed).
    """
    b = mathcore.inv_pd(hp.Lambda0) + _pair_quadratic(data.x, resp.Omega)
    draws = sample_bartlett_lower(data.dx, hp.eta0, rng, size=mc_samples)
    return _gate_value_grad(data.x, b, hp.eta0, chol_gate, draws)


def m_step_gate_stochastic(data: Dataset, hp: Hyperparameters, resp: Responsibilities,
                           chol_init: np.ndarray, config: FitConfig,
                           rng: np.random.Generator) -> np.ndarray:
    """Stochastic gate update: Adam on the lower-triangular factor entries.

    Runs ``config.gate_subiterations`` bias-corrected Adam steps with fresh
    Bartlett draws per step, re-projecting diagonal entries below 1e-10.
    """
    b = mathcore.inv_pd(hp.Lambda0) + _pair_quadratic(data.x, resp.Omega)
    chol_gate = np.tril(chol_init).copy()
    mom = np.zeros_like(chol_gate)
    sq = np.zeros_like(chol_gate)
    lr = config.adam_learning_rate
    for step in range(1, config.gate_subiterations + 1):
        draws = sample_bartlett_lower(data.dx, hp.eta0, rng, size=config.gate_mc_samples)
        _, grad = _gate_value_grad(data.x, b, hp.eta0, chol_gate, draws)
        mom = ADAM_BETA1 * mom + (1.0 - ADAM_BETA1) * grad
        sq = ADAM_BETA2 * sq + (1.0 - ADAM_BETA2) * grad * grad
        mom_hat = mom / (1.0 - ADAM_BETA1 ** step)
        sq_hat = sq / (1.0 - ADAM_BETA2 ** step)
        chol_gate = chol_gate - lr * mom_hat / (np.sqrt(sq_hat) + ADAM_EPS)
        chol_gate = np.tril(chol_gate)
        d = np.diag_indices_from(chol_gate)
        chol_gate[d] = np.maximum(chol_gate[d], GATE_DIAG_FLOOR)
    return chol_gate


# ---------------------------------------------------------------------------
# evidence lower bound
# ---------------------------------------------------------------------------

def elbo(data: Dataset, hp: Hyperparameters, state: VariationalState) -> float:
    """Evidence lower bound of the linearized model at the current state.

    Sum of the expected full-conditional log-densities (with raw, unfloored
    expert weights), the expected log-prior, minus the expected log variational
    posterior. The last two cancel exactly when the state equals the prior.
    """
    cond, prior, entropy = elbo_parts(data, hp, state)
    out = cond + prior - entropy
    if not np.isfinite(out):
        raise NonFiniteError("non-finite evidence lower bound; the state is corrupted")
    return float(out)


def elbo_parts(data: Dataset, hp: Hyperparameters, state: VariationalState):
    """The three bound contributions: conditional, prior, posterior expectation."""
    n, dx, dy = data.n, data.dx, data.dy
    c = len(state.experts)
    stats = _ExpertStats(state.experts)
    maha = stats.mahalanobis(data.y)
    r = expert_weights(state.resp.omega, state.lin.s)

    inner = (-stats.dgsum + stats.logdet + dy / stats.kappa)[None, :] + stats.nu[None, :] * maha
    v = data.x @ state.gate_L
    d2 = _pairwise_sq_dists(v)
    eta = state.gate_eta
    cond = (-0.5 * n * dy * math.log(math.pi)
            - 0.5 * float(np.sum(r * inner))
            - 0.5 * eta * float(np.sum((state.resp.Omega - state.lin.t) * d2)))

    # gate prior / posterior cross terms
    logdet_lam = 2.0 * float(np.sum(np.log(np.diag(state.gate_L))))
    logdet_lam0 = mathcore.log_det_pd(hp.Lambda0)
    lam0_inv = mathcore.inv_pd(hp.Lambda0)
    lam = state.gate_L @ state.gate_L.T
    e_logdet_lam = digamma_half_sum(eta, dx) + dx * math.log(2.0) + logdet_lam
    prior = (-0.5 * hp.eta0 * dx * math.log(2.0) - 0.5 * hp.eta0 * logdet_lam0
             - multivariate_log_gamma(dx, hp.eta0 / 2.0)
             + 0.5 * (hp.eta0 - dx - 1.0) * e_logdet_lam
             - 0.5 * eta * float(np.sum(lam0_inv * lam)))
    entropy = (-0.5 * eta * dx * math.log(2.0) - 0.5 * eta * logdet_lam
               - multivariate_log_gamma(dx, eta / 2.0)
               + 0.5 * (eta - dx - 1.0) * e_logdet_lam
               - 0.5 * eta * dx)

    # expert prior / posterior cross terms
    chol_sigma0 = mathcore.cholesky(hp.Sigma0)
    logdet_sigma0 = 2.0 * float(np.sum(np.log(np.diag(chol_sigma0))))
    lg_nu0 = multivariate_log_gamma(dy, hp.nu0 / 2.0)
    for k in range(c):
        ex = state.experts[k]
        chol = stats.chols[k]
        e_logdet = -stats.dgsum[k] - dy * math.log(2.0) + stats.logdet[k]
        z = solve_triangular(chol, ex.mu - hp.mu0, lower=True)
        quad0 = dy / ex.kappa + ex.nu * float(z @ z)
        w = solve_triangular(chol, chol_sigma0, lower=True)
        tr0 = float(np.sum(w * w))  # tr(Sigma0 Sigma_c^{-1}) via the factored Frobenius form
        prior += (-0.5 * dy * LOG_2PI + 0.5 * dy * math.log(hp.kappa0)
                  - 0.5 * e_logdet - 0.5 * hp.kappa0 * quad0
                  + 0.5 * hp.nu0 * logdet_sigma0 - 0.5 * hp.nu0 * dy * math.log(2.0)
                  - lg_nu0 - 0.5 * (hp.nu0 + dy + 1.0) * e_logdet
                  - 0.5 * ex.nu * tr0)
        entropy += (-0.5 * dy * LOG_2PI + 0.5 * dy * math.log(ex.kappa)
                    - 0.5 * e_logdet - 0.5 * dy
                    + 0.5 * ex.nu * stats.logdet[k] - 0.5 * ex.nu * dy * math.log(2.0)
                    - multivariate_log_gamma(dy, ex.nu / 2.0)
                    - 0.5 * (ex.nu + dy + 1.0) * e_logdet
                    - 0.5 * ex.nu * dy)

    return float(cond), float(prior), float(entropy)


# ---------------------------------------------------------------------------
# fit loop
# ---------------------------------------------------------------------------

def fit(data: Dataset, hp: Hyperparameters, config: FitConfig):
    """Run the full variational fit; returns the final state and the trace.

    Deterministic given ``config.seed``: the initial state is seed-independent
    and all Monte Carlo draws come from one stream spawned from the seed.
    """
    config.validate()
    hp.validate(data)
    root = np.random.SeedSequence(config.seed)
    ss_init, ss_gate = root.spawn(2)
    state = init_state(data, hp, seed=ss_init.entropy)
    rng_gate = np.random.default_rng(ss_gate)
    trace = ElboTrace()
    for iteration in range(config.iterations):
        started = time.perf_counter()
        try:
            state.lin.s = update_s(data, state.experts, state.resp)
            if config.gate_mode == "closed_projected":
                state.lin.t = update_t(data, state)
            state.resp = e_step(data, hp, state)
            state.experts = m_step_experts(data, hp, state.resp, state.lin.s, config.r_floor)
            if config.gate_mode == "stochastic":
                state.gate_L = m_step_gate_stochastic(data, hp, state.resp, state.gate_L,
                                                      config, rng_gate)
            else:
                state.gate_L = m_step_gate_closed(data, hp, state.resp, state.lin.t,
                                                  config.eig_floor)
            gate_value, _ = gate_objective_and_gradient(data, hp, state.resp, state.gate_L,
                                                        config.gate_mc_samples, rng_gate)
            bound = elbo(data, hp, state)
        except (NonFiniteError, NotPositiveDefinite) as exc:
            raise type(exc)(f"iteration {iteration}: {exc}") from exc
        trace.records.append(ElboRecord(iteration=iteration, elbo=bound,
                                        gate_objective=gate_value,
                                        wall_time=time.perf_counter() - started))
    return state, trace
