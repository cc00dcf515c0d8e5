"""Independent straight-line oracles for the variational updates.

Everything here is written as plain loops over scalars with explicit matrix
inverses from numpy, deliberately sharing no code with the package internals:
scipy special functions instead of the hand-rolled ones, ``np.linalg.inv`` and
``slogdet`` instead of Cholesky solves, and direct summation in index order.
"""

import numpy as np
from scipy.special import digamma as sp_digamma
from scipy.special import multigammaln


def dg_half_sum(a, d):
    return sum(sp_digamma((a + 1.0 - i) / 2.0) for i in range(1, d + 1))


def expected_log_normal_oracle(nu, kappa, mu, sigma, y):
    """E log N(y | mu_c, Sigma_c) under one NIW posterior, constant omitted."""
    d = len(mu)
    quad = (y - mu) @ np.linalg.inv(sigma) @ (y - mu)
    return (0.5 * dg_half_sum(nu, d) - 0.5 * np.linalg.slogdet(sigma)[1]
            - 0.5 * d / kappa - 0.5 * nu * quad)


def e_step_oracle(x, y, experts, gate_L, eta, s, t):
    """Unnormalized-then-normalized responsibilities, one scalar at a time.

    ``experts`` is a list of dicts with keys nu, kappa, mu, Sigma.
    """
    n = x.shape[0]
    c = len(experts)
    dy = y.shape[1]
    lam = gate_L @ gate_L.T
    logw = np.full((c, n, n), -np.inf)
    for k in range(c):
        ex = experts[k]
        sig_inv = np.linalg.inv(ex["Sigma"])
        logdet = np.linalg.slogdet(ex["Sigma"])[1]
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                val = 0.0
                for dim in range(1, dy + 1):
                    val += sp_digamma((ex["nu"] + 1 - dim) / 2.0)
                    for k2 in range(c):
                        val -= 0.5 * s[j, k2] * sp_digamma((experts[k2]["nu"] + 1 - dim) / 2.0)
                val -= logdet
                for k2 in range(c):
                    val += 0.5 * s[j, k2] * np.linalg.slogdet(experts[k2]["Sigma"])[1]
                val += dy * (-1.0 / ex["kappa"])
                for k2 in range(c):
                    val += dy * 0.5 * s[j, k2] / experts[k2]["kappa"]
                di = y[i] - ex["mu"]
                dj = y[j] - ex["mu"]
                val -= 0.5 * ex["nu"] * di @ sig_inv @ di
                val -= 0.5 * ex["nu"] * dj @ sig_inv @ dj
                # correction term carries the conjugate nu factor of each expert
                for k2 in range(c):
                    ex2 = experts[k2]
                    dj2 = y[j] - ex2["mu"]
                    val += 0.5 * s[j, k2] * ex2["nu"] * dj2 @ np.linalg.inv(ex2["Sigma"]) @ dj2
                dx_ij = x[i] - x[j]
                val -= 0.5 * eta * dx_ij @ lam @ dx_ij
                for j2 in range(n):
                    if j2 == i:
                        continue
                    dx2 = x[i] - x[j2]
                    val += 0.5 * eta * t[i, j2] * dx2 @ lam @ dx2
                logw[k, i, j] = val
    omega = np.zeros_like(logw)
    for i in range(n):
        shift = logw[:, i, :].max()
        w = np.exp(logw[:, i, :] - shift)
        for k in range(c):
            w[k, i] = 0.0
        omega[:, i, :] = w / w.sum()
    return omega


def expert_weights_oracle(omega, s):
    c, n, _ = omega.shape
    r = np.zeros((n, c))
    for i in range(n):
        for k in range(c):
            acc = 0.0
            for j in range(n):
                if j == i:
                    continue
                big = sum(omega[k2, j, i] for k2 in range(c))
                acc += omega[k, i, j] + omega[k, j, i] - s[i, k] * big
            r[i, k] = acc
    return r


def m_step_experts_oracle(y, omega, s, kappa0, mu0, nu0, sigma0, r_floor):
    c, n, _ = omega.shape
    r = np.maximum(expert_weights_oracle(omega, s), r_floor)
    out = []
    for k in range(c):
        big_r = sum(r[i, k] for i in range(n))
        kap = kappa0 + big_r
        nu = nu0 + big_r
        mu = kappa0 * mu0.copy()
        for i in range(n):
            mu = mu + r[i, k] * y[i]
        mu = mu / kap
        sig = sigma0 + kappa0 * np.outer(mu0, mu0) - kap * np.outer(mu, mu)
        for i in range(n):
            sig = sig + r[i, k] * np.outer(y[i], y[i])
        out.append({"kappa": kap, "mu": mu, "nu": nu, "Sigma": sig})
    return out


def gate_closed_oracle(x, omega, t, lambda0, eig_floor):
    n = x.shape[0]
    inv_scale = np.linalg.inv(lambda0)
    big = omega.sum(axis=0)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = x[i] - x[j]
            inv_scale = inv_scale + (big[i, j] - t[i, j]) * np.outer(d, d)
    vals, vecs = np.linalg.eigh(0.5 * (inv_scale + inv_scale.T))
    vals = np.maximum(vals, eig_floor)
    lam = vecs @ np.diag(1.0 / vals) @ vecs.T
    return np.linalg.cholesky(0.5 * (lam + lam.T))


def update_s_vertices(bounds):
    """All vertices of {s >= 0, sum(s) = 1, s <= bounds}.

    At a vertex at most one coordinate is strictly between its bounds: every
    choice of a saturated subset and one fractional index is enumerated and
    filtered for feasibility.
    """
    c = len(bounds)
    verts = []
    for mask in range(1 << c):
        at_bound = [k for k in range(c) if mask >> k & 1]
        used = sum(bounds[k] for k in at_bound)
        if abs(used - 1.0) < 1e-12:
            v = np.zeros(c)
            for k in at_bound:
                v[k] = bounds[k]
            verts.append(v)
        for free in range(c):
            if free in at_bound:
                continue
            rest = 1.0 - used
            if 1e-12 < rest < bounds[free] - 1e-12:
                v = np.zeros(c)
                for k in at_bound:
                    v[k] = bounds[k]
                v[free] = rest
                verts.append(v)
    return verts


def update_s_row_oracle(coeffs, bounds):
    """Exhaustive vertex-enumeration optimum of one LP row."""
    best = None
    best_val = np.inf
    for v in update_s_vertices(bounds):
        val = float(np.dot(coeffs, v))
        if val < best_val - 1e-15:
            best_val = val
            best = v
    return best, best_val


def update_t_row_oracle(coeffs_row):
    """Best canonical basis vector for one row (diagonal already masked)."""
    best = int(np.argmin(coeffs_row))
    t = np.zeros_like(coeffs_row)
    t[best] = 1.0
    return t


def elbo_oracle(x, y, experts, gate_L, eta, omega, s, t,
                lambda0, eta0, mu0, kappa0, sigma0, nu0):
    """Straight-line evidence lower bound: conditional + prior - entropy."""
    n, dx = x.shape
    dy = y.shape[1]
    c = len(experts)
    lam = gate_L @ gate_L.T
    r = expert_weights_oracle(omega, s)
    big = omega.sum(axis=0)

    cond = 0.0
    for i in range(n):
        cond += -0.5 * dy * np.log(np.pi)
        for k in range(c):
            ex = experts[k]
            quad = (y[i] - ex["mu"]) @ np.linalg.inv(ex["Sigma"]) @ (y[i] - ex["mu"])
            cond -= 0.5 * r[i, k] * (-dg_half_sum(ex["nu"], dy)
                                     + np.linalg.slogdet(ex["Sigma"])[1]
                                     + dy / ex["kappa"] + ex["nu"] * quad)
        for j in range(n):
            if j == i:
                continue
            d = x[i] - x[j]
            cond -= 0.5 * eta * (big[i, j] - t[i, j]) * (d @ lam @ d)

    logdet_lam = np.linalg.slogdet(lam)[1]
    logdet_lam0 = np.linalg.slogdet(lambda0)[1]
    e_logdet_lam = dg_half_sum(eta, dx) + dx * np.log(2.0) + logdet_lam
    prior = (-0.5 * eta0 * dx * np.log(2.0) - 0.5 * eta0 * logdet_lam0
             - multigammaln(eta0 / 2.0, dx)
             + 0.5 * (eta0 - dx - 1.0) * e_logdet_lam
             - 0.5 * eta * np.trace(np.linalg.inv(lambda0) @ lam))
    entropy = (-0.5 * eta * dx * np.log(2.0) - 0.5 * eta * logdet_lam
               - multigammaln(eta / 2.0, dx)
               + 0.5 * (eta - dx - 1.0) * e_logdet_lam
               - 0.5 * eta * dx)
    for k in range(c):
        ex = experts[k]
        sig_inv = np.linalg.inv(ex["Sigma"])
        logdet_sig = np.linalg.slogdet(ex["Sigma"])[1]
        e_logdet = -dg_half_sum(ex["nu"], dy) - dy * np.log(2.0) + logdet_sig
        quad0 = dy / ex["kappa"] + ex["nu"] * (ex["mu"] - mu0) @ sig_inv @ (ex["mu"] - mu0)
        prior += (-0.5 * dy * np.log(2.0 * np.pi) + 0.5 * dy * np.log(kappa0)
                  - 0.5 * e_logdet - 0.5 * kappa0 * quad0
                  + 0.5 * nu0 * np.linalg.slogdet(sigma0)[1]
                  - 0.5 * nu0 * dy * np.log(2.0) - multigammaln(nu0 / 2.0, dy)
                  - 0.5 * (nu0 + dy + 1.0) * e_logdet
                  - 0.5 * ex["nu"] * np.trace(sigma0 @ sig_inv))
        entropy += (-0.5 * dy * np.log(2.0 * np.pi) + 0.5 * dy * np.log(ex["kappa"])
                    - 0.5 * e_logdet - 0.5 * dy
                    + 0.5 * ex["nu"] * logdet_sig - 0.5 * ex["nu"] * dy * np.log(2.0)
                    - multigammaln(ex["nu"] / 2.0, dy)
                    - 0.5 * (ex["nu"] + dy + 1.0) * e_logdet
                    - 0.5 * ex["nu"] * dy)
    return cond + prior - entropy


def gate_objective_oracle(x, omega, lambda0, eta0, gate_L, draws):
    """Objective of the stochastic gate step for explicit Bartlett draws."""
    n = x.shape[0]
    val = -eta0 * np.linalg.slogdet(gate_L)[1]
    big = omega.sum(axis=0)
    scatter = np.linalg.inv(lambda0)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = x[i] - x[j]
            scatter = scatter + big[i, j] * np.outer(d, d)
    val += 0.5 * eta0 * np.trace(gate_L.T @ scatter @ gate_L)
    for a in draws:
        w = gate_L @ a @ a.T @ gate_L.T
        for i in range(n):
            terms = []
            for j in range(n):
                if j == i:
                    continue
                d = x[i] - x[j]
                terms.append(-0.5 * d @ w @ d)
            m = max(terms)
            val += (m + np.log(sum(np.exp(tv - m) for tv in terms))) / len(draws)
    return val


def random_tiny_instance(rng, n=None, c=None, dx=None, dy=None):
    """Random fully-populated tiny state for the oracle-equivalence sweeps."""
    n = n or int(rng.integers(2, 5))
    c = c or int(rng.integers(1, 4))
    dx = dx or int(rng.integers(1, 3))
    dy = dy or int(rng.integers(1, 3))
    x = rng.normal(size=(n, dx))
    y = rng.normal(size=(n, dy))

    def rand_pd(d, scale=1.0):
        a = rng.normal(size=(d, d))
        return scale * (a @ a.T + d * np.eye(d))

    experts = [{"nu": dy + 1 + float(rng.uniform(0.5, 4.0)),
                "kappa": float(rng.uniform(0.3, 5.0)),
                "mu": rng.normal(size=dy),
                "Sigma": rand_pd(dy)} for _ in range(c)]
    gate_L = np.linalg.cholesky(rand_pd(dx, 0.5))
    eta = dx + 1 + float(rng.uniform(0.0, 3.0))
    omega = rng.uniform(0.05, 1.0, size=(c, n, n))
    omega[:, np.arange(n), np.arange(n)] = 0.0
    omega /= omega.sum(axis=(0, 2), keepdims=True)
    s = rng.uniform(0.05, 1.0, size=(n, c))
    s /= s.sum(axis=1, keepdims=True)
    t = rng.uniform(0.05, 1.0, size=(n, n))
    t[np.arange(n), np.arange(n)] = 0.0
    t /= t.sum(axis=1, keepdims=True)
    lambda0 = rand_pd(dx)
    mu0 = rng.normal(size=dy)
    sigma0 = rand_pd(dy)
    return {
        "x": x, "y": y, "experts": experts, "gate_L": gate_L, "eta": eta,
        "omega": omega, "s": s, "t": t, "lambda0": lambda0,
        "eta0": eta, "mu0": mu0, "kappa0": float(rng.uniform(0.1, 3.0)),
        "sigma0": sigma0, "nu0": dy + 1 + float(rng.uniform(0.0, 3.0)),
    }
