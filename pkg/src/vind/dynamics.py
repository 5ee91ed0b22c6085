"""Locally linear latent evolution.

The transition mean is z' = A(z) z with

    A(z) = A_base + alpha * sym(b_net(z)),

where b_net emits the d(d+1)/2 free entries of a symmetric matrix packed in
row-major upper-triangle order, and alpha is a fixed (non-trained) scalar
that bounds how fast A can vary.  Transition noise has diagonal precision
Gamma = diag(exp(gamma_log)); the first state has mean a0 and diagonal
precision Gamma0.

``assemble_s`` returns the exact curvature (negative Hessian) of the
evolution log density in Z with the A field frozen at the evaluation path:

    diag[0]   = Gamma0 (if the prior is included) + A_0^T Gamma A_0
    diag[t]   = Gamma + A_t^T Gamma A_t          (0 < t < T-1)
    diag[T-1] = Gamma
    lower[t]  = -Gamma A_t
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .blocktri import BlockTriSym
from .errors import ShapeError
from .nn import Mlp, mlp_init

LOG_2PI = float(np.log(2.0 * np.pi))


@lru_cache(maxsize=None)
def _duplication(d):
    """(d*d, K) matrix mapping packed upper-triangle entries to a full symmetric matrix."""
    K = d * (d + 1) // 2
    m = np.zeros((d * d, K))

    def packed(i, j):
        i, j = min(i, j), max(i, j)
        return i * d - i * (i - 1) // 2 + (j - i)

    for i in range(d):
        for j in range(d):
            m[i * d + j, packed(i, j)] = 1.0
    return m


def sym_from_packed(v):
    """Tensor (…, K) -> (…, d, d) symmetric, row-major upper-triangle packing."""
    v = ad.tensor(v)
    K = v.shape[-1]
    d = int((np.sqrt(8 * K + 1) - 1) / 2)
    if d * (d + 1) // 2 != K:
        raise ShapeError(f"{K} is not a triangular number")
    flat = ad.matmul(v, ad.tensor(_duplication(d).T))
    return ad.reshape(flat, v.shape[:-1] + (d, d))


@dataclass
class EvolutionModel:
    d_z: int
    alpha: float
    a_base: ad.Tensor        # (d, d)
    b_net: Mlp               # d -> d(d+1)/2
    gamma_log: ad.Tensor     # (d,) log of transition precision diagonal
    a0: ad.Tensor            # (d,) first-state mean
    gamma0_log: ad.Tensor    # (d,) log of first-state precision diagonal
    disable_b_branch: bool = field(default=False)

    @property
    def gamma(self):
        return np.diag(np.exp(self.gamma_log.data))

    @property
    def gamma0(self):
        return np.diag(np.exp(self.gamma0_log.data))

    def parameters(self):
        out = [("a_base", self.a_base)]
        out += [(f"b_net.{n}", p) for n, p in self.b_net.parameters()]
        out += [("gamma_log", self.gamma_log), ("a0", self.a0), ("gamma0_log", self.gamma0_log)]
        return out


def evolution_init(d_z, alpha, widths=(32, 32), seed=0, output_scale=1e-2):
    """A_base starts at the identity so the initial mean map is z' = z."""
    b_net = mlp_init(d_z, list(widths), d_z * (d_z + 1) // 2,
                     activation="tanh", seed=seed, output_scale=output_scale)
    return EvolutionModel(
        d_z=d_z,
        alpha=float(alpha),
        a_base=ad.parameter(np.eye(d_z)),
        b_net=b_net,
        gamma_log=ad.parameter(np.zeros(d_z)),
        a0=ad.parameter(np.zeros(d_z)),
        gamma0_log=ad.parameter(np.zeros(d_z)),
    )


# -- A field -------------------------------------------------------------------


def a_field_t(evo, z):
    """Tensor (…, d) -> (…, d, d); tape-recorded."""
    z = ad.tensor(z)
    if z.ndim < 2:
        raise ShapeError("a_field_t expects at least one leading axis")
    shape = z.shape[:-1] + (evo.d_z, evo.d_z)
    if evo.disable_b_branch:
        return ad.expand(evo.a_base, shape)
    b_sym = sym_from_packed(evo.b_net.forward(z))
    return evo.a_base + evo.alpha * b_sym


def a_field(evo, z):
    """Numpy version of a_field_t over any leading batch axes."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    out = a_field_t(evo, ad.tensor(z[None] if single else z)).data
    return out[0] if single else out


def a_matrix(evo, z):
    """A(z) for a single state z of shape (d,)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (evo.d_z,):
        raise ShapeError(f"state must be ({evo.d_z},)")
    return a_field(evo, z)


def evolve_mean(evo, z, k=1):
    """Apply the deterministic mean map k times; z may carry batch axes."""
    z = np.asarray(z, dtype=np.float64)
    for _ in range(k):
        A = a_field(evo, z)
        z = np.einsum("...ij,...j->...i", A, z)
    return z


def simulate(evo, z0, T, eps=None):
    """Roll the evolution forward: (T, d) path starting at z0.

    When ``eps`` of shape (T-1, d) is given, each step adds
    Gamma^{-1/2} eps[t] (diagonal scaling) to the mean update.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.shape != (evo.d_z,):
        raise ShapeError(f"z0 must be ({evo.d_z},)")
    scale = np.exp(-0.5 * evo.gamma_log.data)
    path = np.empty((T, evo.d_z))
    path[0] = z0
    for t in range(T - 1):
        step = evolve_mean(evo, path[t])
        if eps is not None:
            step = step + scale * eps[t]
        path[t + 1] = step
    return path


# -- log density ----------------------------------------------------------------


def evolution_logdensity_t(evo, Z):
    """Tensor (B, T, d) -> (B,): prior plus transition terms, full normalizers."""
    Z = ad.tensor(Z)
    B, T, d = Z.shape
    r0 = Z[:, 0] - evo.a0
    quad0 = ad.sum_(ad.square(r0) * ad.exp(evo.gamma0_log), axis=1)
    out = 0.5 * ad.sum_(evo.gamma0_log) - 0.5 * d * LOG_2PI - 0.5 * quad0
    if T > 1:
        A = a_field_t(evo, Z[:, :T - 1])
        pred = ad.squeeze(ad.matmul(A, ad.unsqueeze(Z[:, :T - 1], -1)), -1)
        resid = Z[:, 1:] - pred
        quad = ad.sum_(ad.square(resid) * ad.exp(evo.gamma_log), axis=(1, 2))
        out = out + (T - 1) * (0.5 * ad.sum_(evo.gamma_log) - 0.5 * d * LOG_2PI) - 0.5 * quad
    return out


def evolution_logdensity(evo, Z):
    """Single path (T, d) -> float."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != evo.d_z:
        raise ShapeError(f"path must be (T, {evo.d_z})")
    return float(evolution_logdensity_t(evo, ad.tensor(Z[None])).data[0])


def evolution_logdensity_frozen(evo, Z, A_blocks):
    """Log density with the A field held fixed at the given (T-1, d, d) blocks.

    Quadratic in Z; used to validate assemble_s against a dense Hessian.
    """
    Z = np.asarray(Z, dtype=np.float64)
    A_blocks = np.asarray(A_blocks, dtype=np.float64)
    T, d = Z.shape
    gamma = np.exp(evo.gamma_log.data)
    gamma0 = np.exp(evo.gamma0_log.data)
    r0 = Z[0] - evo.a0.data
    out = 0.5 * np.sum(evo.gamma0_log.data) - 0.5 * d * LOG_2PI - 0.5 * np.sum(r0 * gamma0 * r0)
    if T > 1:
        pred = np.einsum("tij,tj->ti", A_blocks, Z[:-1])
        resid = Z[1:] - pred
        out += (T - 1) * (0.5 * np.sum(evo.gamma_log.data) - 0.5 * d * LOG_2PI)
        out -= 0.5 * np.sum(resid * gamma * resid)
    return float(out)


# -- curvature blocks ------------------------------------------------------------


def s_blocks_t(evo, A, T, include_prior=True):
    """Curvature blocks from transition matrices A (B, T-1, d, d) Tensors.

    Returns (diag (B, T, d, d), lower (B, T-1, d, d)).  For T == 1 pass A of
    shape (B, 0, d, d); the result is just the prior precision block.
    """
    d = evo.d_z
    A = ad.tensor(A)
    Bsz = A.shape[0]
    if T == 1:
        if include_prior:
            g0 = ad.diag_embed(ad.exp(evo.gamma0_log))
            diag = ad.expand(g0, (Bsz, 1, d, d))
        else:
            diag = ad.tensor(np.zeros((Bsz, 1, d, d)))
        return diag, ad.tensor(np.zeros((Bsz, 0, d, d)))
    gamma_col = ad.unsqueeze(ad.exp(evo.gamma_log), -1)       # (d, 1) scales rows
    GA = gamma_col * A                                        # Gamma A_t
    AtGA = ad.matmul(ad.mT(A), GA)                            # A_t^T Gamma A_t
    gam_mat = ad.diag_embed(ad.exp(evo.gamma_log))            # (d, d)
    first = AtGA[:, 0:1]
    if include_prior:
        first = first + ad.diag_embed(ad.exp(evo.gamma0_log))
    last = ad.expand(gam_mat, (Bsz, 1, d, d))
    if T > 2:
        mid = AtGA[:, 1:] + gam_mat
        diag = ad.concat([first, mid, last], axis=1)
    else:
        diag = ad.concat([first, last], axis=1)
    return diag, -GA


def assemble_s(evo, P, include_prior=True):
    """Numpy wrapper: path P (T, d) -> BlockTriSym curvature at that path."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != evo.d_z:
        raise ShapeError(f"path must be (T, {evo.d_z})")
    T = P.shape[0]
    if T == 1:
        A = ad.tensor(np.zeros((1, 0, evo.d_z, evo.d_z)))
    else:
        A = a_field_t(evo, ad.tensor(P[None, :T - 1]))
    diag, lower = s_blocks_t(evo, A, T, include_prior)
    return BlockTriSym(diag=diag.data[0], lower=lower.data[0])
