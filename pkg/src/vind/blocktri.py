"""Symmetric block-tridiagonal matrices: factor, solve, logdet, sample.

A matrix of T diagonal blocks (d x d) and T-1 sub-diagonal blocks is
factored as M = L L^T where L is block lower-bidiagonal:

    L[0]   = chol(D[0])
    S[t-1] = B[t-1] L[t-1]^{-T}
    L[t]   = chol(D[t] - S[t-1] S[t-1]^T)

All heavy routines exist twice: a Tensor-level version (suffix ``_t``)
whose inputs carry one leading batch axis and which records the tape, and
thin public wrappers over single instances that run the same code on
constants.  Cost is O(T d^3) to factor and O(T d^2) per solve.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NotPositiveDefiniteError, ShapeError


@dataclass
class BlockTriSym:
    """diag: (T, d, d) blocks; lower: (T-1, d, d) blocks at (t+1, t)."""
    diag: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=np.float64)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        if self.diag.ndim != 3 or self.diag.shape[1] != self.diag.shape[2]:
            raise ShapeError("diag must be (T, d, d)")
        T, d = self.diag.shape[0], self.diag.shape[1]
        if self.lower.shape != (T - 1, d, d):
            raise ShapeError(f"lower must be ({T - 1}, {d}, {d})")
        # symmetrize the diagonal blocks so small asymmetries cannot leak in
        self.diag = 0.5 * (self.diag + np.swapaxes(self.diag, -1, -2))

    @property
    def T_len(self):
        return self.diag.shape[0]

    @property
    def d(self):
        return self.diag.shape[1]


@dataclass
class BlockCholesky:
    """Lower factor: diag blocks are lower-triangular, sub blocks are full."""
    diag: np.ndarray   # (T, d, d)
    sub: np.ndarray    # (T-1, d, d)


def to_dense(m: BlockTriSym) -> np.ndarray:
    T, d = m.T_len, m.d
    out = np.zeros((T * d, T * d))
    for t in range(T):
        out[t * d:(t + 1) * d, t * d:(t + 1) * d] = m.diag[t]
    for t in range(T - 1):
        out[(t + 1) * d:(t + 2) * d, t * d:(t + 1) * d] = m.lower[t]
        out[t * d:(t + 1) * d, (t + 1) * d:(t + 2) * d] = m.lower[t].T
    return out


def from_dense(a: np.ndarray, T: int, d: int) -> BlockTriSym:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (T * d, T * d):
        raise ShapeError(f"expected ({T * d}, {T * d}) matrix")
    diag = np.stack([a[t * d:(t + 1) * d, t * d:(t + 1) * d] for t in range(T)])
    if T > 1:
        lower = np.stack([a[(t + 1) * d:(t + 2) * d, t * d:(t + 1) * d] for t in range(T - 1)])
    else:
        lower = np.zeros((0, d, d))
    return BlockTriSym(diag=diag, lower=lower)


# -- Tensor-level routines (leading batch axis B) -----------------------------


def factor_t(diag, lower):
    """diag (B,T,d,d), lower (B,T-1,d,d) Tensors -> (list of L[t], list of S[t]).

    Raises NotPositiveDefiniteError carrying the failing time index.
    """
    diag = ad.tensor(diag)
    lower = ad.tensor(lower)
    T = diag.shape[1]
    Ld, Ls = [], []
    for t in range(T):
        pivot = diag[:, t]
        if t > 0:
            s = ad.mT(ad.tri_solve(Ld[t - 1], ad.mT(lower[:, t - 1])))
            pivot = pivot - ad.matmul(s, ad.mT(s))
            Ls.append(s)
        try:
            Ld.append(ad.cholesky(pivot))
        except np.linalg.LinAlgError:
            raise NotPositiveDefiniteError(t) from None
    return Ld, Ls


def solve_t(Ld, Ls, rhs):
    """Solve M x = rhs given the factor lists; rhs (B,T,d) -> (B,T,d)."""
    rhs = ad.tensor(rhs)
    T = len(Ld)
    ys = []
    for t in range(T):
        b = ad.unsqueeze(rhs[:, t], -1)
        if t > 0:
            b = b - ad.matmul(Ls[t - 1], ys[t - 1])
        ys.append(ad.tri_solve(Ld[t], b))
    xs = [None] * T
    xs[T - 1] = ad.tri_solve(Ld[T - 1], ys[T - 1], trans=True)
    for t in range(T - 2, -1, -1):
        xs[t] = ad.tri_solve(Ld[t], ys[t] - ad.matmul(ad.mT(Ls[t]), xs[t + 1]), trans=True)
    return ad.squeeze(ad.stack(xs, axis=1), -1)


def sqrt_solve_t(Ld, Ls, eps):
    """Compute L^{-T} eps (the sampling transform); eps (B,T,d) -> (B,T,d)."""
    eps = ad.tensor(eps)
    T = len(Ld)
    ws = [None] * T
    ws[T - 1] = ad.tri_solve(Ld[T - 1], ad.unsqueeze(eps[:, T - 1], -1), trans=True)
    for t in range(T - 2, -1, -1):
        b = ad.unsqueeze(eps[:, t], -1) - ad.matmul(ad.mT(Ls[t]), ws[t + 1])
        ws[t] = ad.tri_solve(Ld[t], b, trans=True)
    return ad.squeeze(ad.stack(ws, axis=1), -1)


def logdet_t(Ld):
    """Log-determinant of M = L L^T per batch element: (B,)."""
    diags = ad.stack([ad.diag_part(L) for L in Ld], axis=1)   # (B, T, d)
    return 2.0 * ad.sum_(ad.log(diags), axis=(1, 2))


# -- public single-instance wrappers ------------------------------------------


def _as_batch(m: BlockTriSym):
    return ad.tensor(m.diag[None]), ad.tensor(m.lower[None])


def factor(m: BlockTriSym) -> BlockCholesky:
    diag_t, lower_t = _as_batch(m)
    Ld, Ls = factor_t(diag_t, lower_t)
    diag = np.stack([L.data[0] for L in Ld])
    sub = np.stack([s.data[0] for s in Ls]) if Ls else np.zeros((0, m.d, m.d))
    return BlockCholesky(diag=diag, sub=sub)


def _factor_lists(f: BlockCholesky):
    Ld = [ad.tensor(f.diag[t][None]) for t in range(f.diag.shape[0])]
    Ls = [ad.tensor(f.sub[t][None]) for t in range(f.sub.shape[0])]
    return Ld, Ls


def solve(f: BlockCholesky, rhs: np.ndarray) -> np.ndarray:
    """rhs (T, d) -> solution of M x = rhs, shape (T, d)."""
    rhs = np.asarray(rhs, dtype=np.float64)
    T, d = f.diag.shape[0], f.diag.shape[1]
    if rhs.shape != (T, d):
        raise ShapeError(f"rhs must be ({T}, {d})")
    Ld, Ls = _factor_lists(f)
    return solve_t(Ld, Ls, rhs[None]).data[0]


def logdet(f: BlockCholesky) -> float:
    up = f.diag[:, np.arange(f.diag.shape[1]), np.arange(f.diag.shape[1])]
    return float(2.0 * np.sum(np.log(up)))


def sample_from_precision(mean: np.ndarray, f: BlockCholesky, eps: np.ndarray) -> np.ndarray:
    """mean + L^{-T} eps: a draw from N(mean, M^{-1}) when eps ~ N(0, I)."""
    mean = np.asarray(mean, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mean.shape:
        raise ShapeError("mean and eps must have matching (T, d) shapes")
    Ld, Ls = _factor_lists(f)
    return mean + sqrt_solve_t(Ld, Ls, eps[None]).data[0]


def matvec(m: BlockTriSym, x: np.ndarray) -> np.ndarray:
    """M @ x for x of shape (T, d)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.einsum("tij,tj->ti", m.diag, x)
    if m.T_len > 1:
        out[1:] += np.einsum("tij,tj->ti", m.lower, x[:-1])
        out[:-1] += np.einsum("tji,tj->ti", m.lower, x[1:])
    return out


# -- batched numpy helpers for the trainer ------------------------------------


def factor_arrays(diag, lower):
    """Batched numpy factor: diag (B,T,d,d), lower (B,T-1,d,d) -> (Ld, Ls) arrays.

    Raises NotPositiveDefiniteError (failing time index, unknown batch row).
    """
    Ld, Ls = factor_t(ad.tensor(diag), ad.tensor(lower))
    Ld_a = np.stack([L.data for L in Ld], axis=1)
    if Ls:
        Ls_a = np.stack([s.data for s in Ls], axis=1)
    else:
        B, _, d, _ = np.asarray(diag).shape
        Ls_a = np.zeros((B, 0, d, d))
    return Ld_a, Ls_a


def solve_arrays(Ld, Ls, rhs):
    """Batched numpy solve given factor arrays from factor_arrays."""
    T = Ld.shape[1]
    Ld_l = [ad.tensor(Ld[:, t]) for t in range(T)]
    Ls_l = [ad.tensor(Ls[:, t]) for t in range(T - 1)]
    return solve_t(Ld_l, Ls_l, rhs).data


def sqrt_solve_arrays(Ld, Ls, eps):
    T = Ld.shape[1]
    Ld_l = [ad.tensor(Ld[:, t]) for t in range(T)]
    Ls_l = [ad.tensor(Ls[:, t]) for t in range(T - 1)]
    return sqrt_solve_t(Ld_l, Ls_l, eps).data


def logdet_arrays(Ld):
    d = Ld.shape[-1]
    ii = np.arange(d)
    return 2.0 * np.sum(np.log(Ld[..., ii, ii]), axis=(1, 2))
