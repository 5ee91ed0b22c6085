"""Recognition (encoder) networks.

Each observation row x_t maps independently to a mean m_t and a diagonal
precision Lambda_t = exp(prec_net(x_t)), so the data-side factor of the
posterior is a product of per-time Gaussian kernels.  The log density here
is the bare quadratic -(1/2) sum_t (z_t - m_t)^T Lambda_t (z_t - m_t);
normalizers are deliberately omitted because the surrounding objects are
themselves unnormalized.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NumericalError, ShapeError
from .nn import Mlp, mlp_init


@dataclass
class RecognitionNet:
    d_x: int
    d_z: int
    mu_net: Mlp     # d_x -> d_z
    prec_net: Mlp   # d_x -> d_z, emits log precision entries

    def parameters(self):
        out = [(f"mu_net.{n}", p) for n, p in self.mu_net.parameters()]
        out += [(f"prec_net.{n}", p) for n, p in self.prec_net.parameters()]
        return out


@dataclass
class Encoding:
    """Per-time mean (T, d_z) and diagonal precision entries (T, d_z)."""
    m: np.ndarray
    lam_diag: np.ndarray


def recognition_init(d_x, d_z, widths=(32, 32), seed=0):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    mu_seed, prec_seed = ss.spawn(2)
    mu_net = mlp_init(d_x, list(widths), d_z, activation="tanh", seed=mu_seed)
    prec_net = mlp_init(d_x, list(widths), d_z, activation="tanh", seed=prec_seed)
    return RecognitionNet(d_x=d_x, d_z=d_z, mu_net=mu_net, prec_net=prec_net)


def encode_t(rec, X):
    """Tensor (B, T, d_x) -> (m (B, T, d_z), lam_diag (B, T, d_z)); tape-recorded."""
    X = ad.tensor(X)
    m = rec.mu_net.forward(X)
    lam = ad.exp(rec.prec_net.forward(X))
    return m, lam


def encode(rec, X):
    """Numpy wrapper for a single trial (T, d_x) -> Encoding."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != rec.d_x:
        raise ShapeError(f"observations must be (T, {rec.d_x})")
    m = rec.mu_net.apply(X)
    lam = np.exp(rec.prec_net.apply(X))
    bad = ~(np.isfinite(m).all(axis=1) & np.isfinite(lam).all(axis=1))
    if bad.any():
        t = int(np.argmax(bad))
        raise NumericalError(f"encoder produced non-finite values at time index {t}")
    return Encoding(m=m, lam_diag=lam)


def recognition_logdensity_t(m, lam_diag, Z):
    """Tensors (B, T, d) -> (B,): unnormalized data-side quadratic."""
    r = ad.tensor(Z) - m
    return -0.5 * ad.sum_(ad.square(r) * lam_diag, axis=(1, 2))


def recognition_logdensity(enc, Z):
    """Single trial: Encoding and path (T, d_z) -> float."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape != enc.m.shape:
        raise ShapeError(f"path must be {enc.m.shape}")
    r = Z - enc.m
    return float(-0.5 * np.sum(r * enc.lam_diag * r))
