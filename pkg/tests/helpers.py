"""Shared oracle helpers for the test suite.

Everything here is deliberately written against dense numpy so the routines
under test are checked by an independent route.
"""

import numpy as np


def random_spd_blocktri(rng, T, d, diag_boost=None):
    """Random symmetric positive definite block-tridiagonal (diag, lower) arrays.

    Built to be strictly diagonally dominant blockwise, which guarantees PD.
    """
    lower = rng.normal(size=(T - 1, d, d)) if T > 1 else np.zeros((0, d, d))
    diag = np.empty((T, d, d))
    for t in range(T):
        a = rng.normal(size=(d, d))
        s = a @ a.T
        dom = 0.0
        if t > 0:
            dom += np.abs(lower[t - 1]).sum()
        if t < T - 1:
            dom += np.abs(lower[t]).sum()
        boost = diag_boost if diag_boost is not None else rng.uniform(0.5, 2.0)
        diag[t] = s + (dom + boost) * np.eye(d)
    return diag, lower


def dense_from_blocks(diag, lower):
    T, d = diag.shape[0], diag.shape[1]
    out = np.zeros((T * d, T * d))
    for t in range(T):
        out[t * d:(t + 1) * d, t * d:(t + 1) * d] = diag[t]
    for t in range(T - 1):
        out[(t + 1) * d:(t + 2) * d, t * d:(t + 1) * d] = lower[t]
        out[t * d:(t + 1) * d, (t + 1) * d:(t + 2) * d] = lower[t].T
    return out


def fd_gradient(f, x, step=1e-6):
    """Central-difference gradient of scalar f at 1-D numpy point x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_hessian(f, x, step=1e-4):
    """Dense central-difference Hessian of scalar f at 1-D point x."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            hi = step * (1.0 + abs(x[i]))
            hj = step * (1.0 + abs(x[j]))
            xs = [x.copy() for _ in range(4)]
            xs[0][i] += hi
            xs[0][j] += hj
            xs[1][i] += hi
            xs[1][j] -= hj
            xs[2][i] -= hi
            xs[2][j] += hj
            xs[3][i] -= hi
            xs[3][j] -= hj
            val = (f(xs[0]) - f(xs[1]) - f(xs[2]) + f(xs[3])) / (4.0 * hi * hj)
            H[i, j] = val
            H[j, i] = val
    return H


def fd_jacobian(f, x, step=1e-6):
    """Dense central-difference Jacobian of vector-valued f at 1-D point x."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x))
    J = np.zeros((f0.size, x.size))
    for j in range(x.size):
        h = step * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        xm = x.copy()
        xm[j] -= h
        J[:, j] = (np.asarray(f(xp)).ravel() - np.asarray(f(xm)).ravel()) / (2.0 * h)
    return J


def gaussian_logpdf_dense(x, mean, cov):
    """Multivariate normal log density via dense linear algebra."""
    x = np.asarray(x, dtype=np.float64).ravel()
    mean = np.asarray(mean, dtype=np.float64).ravel()
    n = x.size
    sign, ld = np.linalg.slogdet(cov)
    assert sign > 0
    r = x - mean
    return -0.5 * (n * np.log(2.0 * np.pi) + ld + r @ np.linalg.solve(cov, r))


def gaussian_kl_dense(m0, cov0, m1, cov1):
    """KL(N(m0, cov0) || N(m1, cov1)) in closed form."""
    m0 = np.asarray(m0, dtype=np.float64).ravel()
    m1 = np.asarray(m1, dtype=np.float64).ravel()
    n = m0.size
    s1, ld1 = np.linalg.slogdet(cov1)
    s0, ld0 = np.linalg.slogdet(cov0)
    assert s0 > 0 and s1 > 0
    inv1 = np.linalg.inv(cov1)
    r = m1 - m0
    return 0.5 * (np.trace(inv1 @ cov0) + r @ inv1 @ r - n + ld1 - ld0)


# -- scalar-latent linear-Gaussian instance ---------------------------------------
#
# d_z = 1 state-space model with affine nets so every quantity (prior, posterior,
# marginal likelihood) has a dense closed form.  The encoder can be matched
# exactly to the observation likelihood or detuned on purpose.


def linear_gaussian_model(d_x=1, T=5, A=0.9, w=None, b=None, sigma=None,
                          gamma=2.0, gamma0=1.0, a0=0.0,
                          prec_scale=1.0, mean_shift=0.0):
    """Build a d_z=1 model with affine nets plus the true parameter dict.

    With ``prec_scale=1`` and ``mean_shift=0`` the encoder reproduces the
    exact observation likelihood in z, so the Gaussian child equals the true
    posterior.  Other values detune it deliberately.
    """
    from vind.dynamics import evolution_init
    from vind.generative import gaussian_obs_init
    from vind.model import VindModel
    from vind.recognition import recognition_init

    w = np.full(d_x, 1.3) if w is None else np.asarray(w, dtype=np.float64)
    b = np.full(d_x, 0.2) if b is None else np.asarray(b, dtype=np.float64)
    sigma = np.full(d_x, 0.5) if sigma is None else np.asarray(sigma, dtype=np.float64)

    lam = float(np.sum(w ** 2 / sigma ** 2))
    rec = recognition_init(d_x, 1, widths=(), seed=0)
    rec.mu_net.weights[0].data[:] = (w / sigma ** 2 / lam)[None, :]
    rec.mu_net.biases[0].data[:] = -float(np.sum(w * b / sigma ** 2)) / lam + mean_shift
    rec.prec_net.weights[0].data[:] = 0.0
    rec.prec_net.biases[0].data[:] = np.log(lam * prec_scale)

    evo = evolution_init(1, 0.0, widths=(4,), seed=1)
    evo.a_base.data[:] = [[A]]
    evo.gamma_log.data[:] = np.log(gamma)
    evo.gamma0_log.data[:] = np.log(gamma0)
    evo.a0.data[:] = a0

    obs = gaussian_obs_init(d_x, 1, widths=(), seed=2)
    obs.m_net.weights[0].data[:] = w[:, None]
    obs.m_net.biases[0].data[:] = b
    obs.log_sigma.data[:] = np.log(sigma)

    true = dict(d_x=d_x, T=T, A=A, w=w, b=b, sigma=sigma,
                gamma=gamma, gamma0=gamma0, a0=a0)
    return VindModel(recognition=rec, evolution=evo, observation=obs), true


def lg_prior_dense(true, T):
    """Dense (mean, cov, precision) of the latent path prior, d_z = 1."""
    A, g, g0, a0 = true["A"], true["gamma"], true["gamma0"], true["a0"]
    S = np.zeros((T, T))
    S[0, 0] = g0
    for t in range(T - 1):
        S[t, t] += A * A * g
        S[t + 1, t + 1] += g
        S[t + 1, t] -= A * g
        S[t, t + 1] -= A * g
    rhs = np.zeros(T)
    rhs[0] = g0 * a0
    mean = np.linalg.solve(S, rhs)
    return mean, np.linalg.inv(S), S


def lg_posterior_dense(true, X):
    """Dense (mean, cov) of the exact latent posterior given observations."""
    X = np.asarray(X, dtype=np.float64)
    T = X.shape[0]
    w, b, sigma = true["w"], true["b"], true["sigma"]
    _, _, S = lg_prior_dense(true, T)
    lam = float(np.sum(w ** 2 / sigma ** 2))
    prec = S + lam * np.eye(T)
    rhs = np.zeros(T)
    rhs[0] = true["gamma0"] * true["a0"]
    rhs += (X - b) @ (w / sigma ** 2)
    mean = np.linalg.solve(prec, rhs)
    return mean, np.linalg.inv(prec)


def lg_marginal_loglik(true, X):
    """Exact log p(X) via the joint Gaussian over the stacked observations."""
    X = np.asarray(X, dtype=np.float64)
    T, d_x = X.shape
    w, b, sigma = true["w"], true["b"], true["sigma"]
    mu_z, cov_z, _ = lg_prior_dense(true, T)
    M = np.kron(np.eye(T), w[:, None])          # (T d_x, T)
    mean_x = M @ mu_z + np.tile(b, T)
    cov_x = M @ cov_z @ M.T + np.diag(np.tile(sigma ** 2, T))
    return gaussian_logpdf_dense(X.ravel(), mean_x, cov_x)
