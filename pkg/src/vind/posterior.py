"""Structured variational posterior.

The unnormalized "parent" density over a latent path combines the per-time
recognition kernels with the evolution density:

    log parent(Z | X) = -1/2 sum_t (z_t - m_t)^T Lambda_t (z_t - m_t)
                        + log evolution(Z)          (up to a constant).

Its stationary point solves (Lambda + S(Z)) Z = Y(Z) with

    Y(Z) = Lambda m + e_0 Gamma0 a0 - 1/2 * d/dZ [Z^T S(Z) Z]|_through A,

so a natural fixed-point iteration is Z <- (Lambda + S(Z))^{-1} Y(Z).  The
default mode drops the curvature-gradient term in Y (it is higher order in
alpha); ``exact_y=True`` keeps it, which makes fixed points true stationary
points of the parent.  The Gaussian child used as the actual variational
posterior is N(P, C^{-1}) with C = Lambda + S(P) frozen at the iterate P.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import blocktri as bt
from .dynamics import a_field_t, evolution_logdensity_t, s_blocks_t
from .errors import ShapeError
from .recognition import encode, recognition_logdensity_t

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LaplacePosterior:
    p: np.ndarray              # (T, d) mean path
    factor: bt.BlockCholesky   # factor of C = Lambda + S(P)
    logdet_c: float


@dataclass
class FpiDiagnostics:
    residuals: list            # sup-norm path change per iteration
    converged: bool
    contraction_estimate: float  # max consecutive residual ratio (nan if < 2 residuals)


# -- parent density ------------------------------------------------------------


def parent_logdensity(model, X, Z):
    """Unnormalized log parent for one trial; X (T, d_x), Z (T, d_z)."""
    enc = encode(model.recognition, X)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape != enc.m.shape:
        raise ShapeError(f"path must be {enc.m.shape}")
    rec = recognition_logdensity_t(ad.tensor(enc.m[None]), ad.tensor(enc.lam_diag[None]),
                                   ad.tensor(Z[None]))
    evo = evolution_logdensity_t(model.evolution, ad.tensor(Z[None]))
    return float((rec + evo).data[0])


def parent_gradient(model, X, Z):
    """d log parent / dZ for one trial, via the tape; shape (T, d_z)."""
    enc = encode(model.recognition, X)
    Zv = ad.parameter(np.asarray(Z, dtype=np.float64)[None])
    rec = recognition_logdensity_t(ad.tensor(enc.m[None]), ad.tensor(enc.lam_diag[None]), Zv)
    evo = evolution_logdensity_t(model.evolution, Zv)
    ad.sum_(rec + evo).backward()
    return Zv.grad[0]


# -- batched numpy core ----------------------------------------------------------


def _s_arrays(evo, P):
    """Curvature blocks at path P (B, T, d): numpy (diag, lower), prior included."""
    B, T, d = P.shape
    if T == 1:
        A = ad.tensor(np.zeros((B, 0, d, d)))
    else:
        A = a_field_t(evo, ad.tensor(P[:, :T - 1]))
    diag, lower = s_blocks_t(evo, A, T, include_prior=True)
    return diag.data, lower.data


def _precision_arrays(evo, lam, P):
    """C = Lambda + S(P) as batched (diag, lower) arrays."""
    diag, lower = _s_arrays(evo, P)
    d = P.shape[-1]
    ii = np.arange(d)
    diag = diag.copy()
    diag[..., ii, ii] += lam
    return diag, lower


def _s_quadratic_grad(evo, P):
    """g[b,t,i] = 1/2 d/dZ_{t,i} [P^T S(Z) P] at Z = P, outer P held fixed."""
    B, T, d = P.shape
    if T == 1 or evo.alpha == 0.0 or evo.disable_b_branch:
        return np.zeros_like(P)
    Zv = ad.parameter(P.copy())
    A = a_field_t(evo, Zv[:, :T - 1])
    diag, lower = s_blocks_t(evo, A, T, include_prior=True)
    Pc = ad.tensor(P)
    v1 = ad.matmul(diag, ad.unsqueeze(Pc, -1))
    term = ad.sum_(Pc * ad.squeeze(v1, -1))
    v2 = ad.matmul(lower, ad.unsqueeze(Pc[:, :T - 1], -1))
    term = term + 2.0 * ad.sum_(Pc[:, 1:] * ad.squeeze(v2, -1))
    (0.5 * term).backward()
    return Zv.grad if Zv.grad is not None else np.zeros_like(P)


def _fpi_apply(evo, m, lam, P, exact_y=False):
    """One fixed-point application, batched; all inputs (B, T, d) numpy."""
    diag, lower = _precision_arrays(evo, lam, P)
    rhs = lam * m
    rhs = rhs.copy()
    rhs[:, 0] += np.exp(evo.gamma0_log.data) * evo.a0.data
    if exact_y:
        rhs -= _s_quadratic_grad(evo, P)
    Ld, Ls = bt.factor_arrays(diag, lower)
    return bt.solve_arrays(Ld, Ls, rhs)


# -- public single-trial operations ----------------------------------------------


def fpi_map(model, X, P, exact_y=False):
    """One iteration of the fixed-point map for a single trial."""
    enc = encode(model.recognition, X)
    P = np.asarray(P, dtype=np.float64)
    if P.shape != enc.m.shape:
        raise ShapeError(f"path must be {enc.m.shape}")
    return _fpi_apply(model.evolution, enc.m[None], enc.lam_diag[None], P[None],
                      exact_y=exact_y)[0]


def fpi_solve(model, X, P0=None, n_iters=20, tol=1e-6, exact_y=False):
    """Iterate the map from P0 (default: the encoder means).

    Stops early once the sup-norm step falls to ``tol``.  Returns the final
    path and diagnostics; PD failures propagate.
    """
    enc = encode(model.recognition, X)
    P = np.asarray(P0, dtype=np.float64).copy() if P0 is not None else enc.m.copy()
    if P.shape != enc.m.shape:
        raise ShapeError(f"path must be {enc.m.shape}")
    residuals = []
    for _ in range(n_iters):
        P_new = _fpi_apply(model.evolution, enc.m[None], enc.lam_diag[None], P[None],
                           exact_y=exact_y)[0]
        residuals.append(float(np.max(np.abs(P_new - P))))
        P = P_new
        if residuals[-1] <= tol:
            break
    ratios = [residuals[i + 1] / residuals[i]
              for i in range(len(residuals) - 1) if residuals[i] > 0.0]
    diag = FpiDiagnostics(
        residuals=residuals,
        converged=bool(residuals and residuals[-1] <= tol),
        contraction_estimate=max(ratios) if ratios else float("nan"),
    )
    return P, diag


def laplace_precision(model, X, P):
    """C = Lambda + S(P) for one trial as a BlockTriSym."""
    enc = encode(model.recognition, X)
    P = np.asarray(P, dtype=np.float64)
    if P.shape != enc.m.shape:
        raise ShapeError(f"path must be {enc.m.shape}")
    diag, lower = _precision_arrays(model.evolution, enc.lam_diag[None], P[None])
    return bt.BlockTriSym(diag=diag[0], lower=lower[0])


def laplace_posterior(model, X, P):
    """Freeze the Gaussian child at P: factor C and cache its log-determinant."""
    c = laplace_precision(model, X, P)
    f = bt.factor(c)
    return LaplacePosterior(p=np.asarray(P, dtype=np.float64).copy(),
                            factor=f, logdet_c=bt.logdet(f))


def sample_posterior(post, eps):
    """Draw P + L^{-T} eps from the child."""
    return bt.sample_from_precision(post.p, post.factor, eps)


def entropy(post):
    """Differential entropy of the child: (n/2)(1 + log 2 pi) - (1/2) logdet C."""
    n = post.p.size
    return 0.5 * n * (1.0 + LOG_2PI) - 0.5 * post.logdet_c


def contraction_bound(model, X, P, exact_y=False, probes=8, step=1e-5, seed=0):
    """Estimated max absolute row sum of the fixed-point map's Jacobian at P.

    Small problems (T*d_z <= 64) get a dense central-difference Jacobian and
    the estimate is essentially exact; larger ones use random sign-vector
    directional probes, whose max is a lower estimate of the true row-sum
    norm.  A value below 1 indicates a locally contractive iteration.
    """
    enc = encode(model.recognition, X)
    P = np.asarray(P, dtype=np.float64)
    T, d = enc.m.shape
    n = T * d
    evo = model.evolution
    m_b, lam_b = enc.m[None], enc.lam_diag[None]

    def apply_flat(flat):
        return _fpi_apply(evo, m_b, lam_b, flat.reshape(1, T, d), exact_y=exact_y).ravel()

    flat0 = P.ravel()
    if n <= 64:
        J = np.empty((n, n))
        for j in range(n):
            h = step * (1.0 + abs(flat0[j]))
            fp = flat0.copy()
            fp[j] += h
            fm = flat0.copy()
            fm[j] -= h
            J[:, j] = (apply_flat(fp) - apply_flat(fm)) / (2.0 * h)
        return float(np.max(np.abs(J).sum(axis=1)))
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(probes):
        v = rng.choice([-1.0, 1.0], size=n)
        jv = (apply_flat(flat0 + step * v) - apply_flat(flat0 - step * v)) / (2.0 * step)
        best = max(best, float(np.max(np.abs(jv))))
    return best


def posterior_from_solve(model, X, n_iters=50, tol=1e-8, exact_y=False):
    """Convenience: run the iteration from the encoder means and freeze the child."""
    P, diag = fpi_solve(model, X, n_iters=n_iters, tol=tol, exact_y=exact_y)
    return laplace_posterior(model, X, P), diag


def refine_paths(model, X_batch, P_batch, n_apps, exact_y=False):
    """Apply the map ``n_apps`` times to a batch of cached paths (numpy).

    Used by the trainer's refresh step; PD failures propagate so the caller
    can fall back per trial.
    """
    rec = model.recognition
    m = rec.mu_net.apply(X_batch)
    lam = np.exp(rec.prec_net.apply(X_batch))
    P = P_batch
    for _ in range(n_apps):
        P = _fpi_apply(model.evolution, m, lam, P, exact_y=exact_y)
    return P


def make_alpha_scaled(model, scale):
    """A shallow copy of the model whose evolution alpha is multiplied by scale."""
    evo = replace(model.evolution, alpha=model.evolution.alpha * scale)
    return replace(model, evolution=evo)
