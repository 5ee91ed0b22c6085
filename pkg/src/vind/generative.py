"""Observation models, the joint density, and the one-sample ELBO.

Two emission families:

* Gaussian: x_t ~ N(m_net(z_t), diag(sigma^2)) with a state-independent
  diagonal scale, parameterized by log_sigma.
* Poisson: x_t ~ Poisson(softplus(rate_net(z_t))) elementwise; the link
  keeps rates positive for every finite input.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import autodiff as ad
from .dynamics import LOG_2PI, evolution_logdensity_t
from .errors import InvalidDataError, ShapeError
from .nn import Mlp, mlp_init

_RATE_FLOOR = 1e-10  # keeps log(rate) finite when softplus underflows


@dataclass
class GaussianObs:
    d_x: int
    d_z: int
    m_net: Mlp                # d_z -> d_x
    log_sigma: ad.Tensor      # (d_x,) log standard deviations

    kind = "gaussian"

    def parameters(self):
        out = [(f"m_net.{n}", p) for n, p in self.m_net.parameters()]
        out.append(("log_sigma", self.log_sigma))
        return out

    def mean(self, z):
        """Decode latent states (…, d_z) to observation means."""
        return self.m_net.apply(z)


@dataclass
class PoissonObs:
    d_x: int
    d_z: int
    rate_net: Mlp             # d_z -> d_x, pre-link

    kind = "poisson"

    def parameters(self):
        return [(f"rate_net.{n}", p) for n, p in self.rate_net.parameters()]

    def mean(self, z):
        u = self.rate_net.apply(z)
        return np.logaddexp(0.0, u) + _RATE_FLOOR


def gaussian_obs_init(d_x, d_z, widths=(32, 32), seed=0):
    net = mlp_init(d_z, list(widths), d_x, activation="tanh", seed=seed)
    return GaussianObs(d_x=d_x, d_z=d_z, m_net=net,
                       log_sigma=ad.parameter(np.zeros(d_x)))


def poisson_obs_init(d_x, d_z, widths=(32, 32), seed=0):
    net = mlp_init(d_z, list(widths), d_x, activation="tanh", seed=seed)
    return PoissonObs(d_x=d_x, d_z=d_z, rate_net=net)


def _check_counts(X):
    if np.any(X < 0) or np.any(X != np.floor(X)):
        raise InvalidDataError("Poisson observations must be non-negative integers")


def obs_logdensity_t(obs, X, Z):
    """Tensors: X (B, T, d_x) constants, Z (B, T, d_z) -> (B,)."""
    Z = ad.tensor(Z)
    X = ad.tensor(X)
    if obs.kind == "gaussian":
        m = obs.m_net.forward(Z)
        ls = obs.log_sigma
        r = X - m
        per = ad.square(r) * ad.exp(-2.0 * ls) + 2.0 * ls + LOG_2PI
        return -0.5 * ad.sum_(per, axis=(1, 2))
    rate = ad.softplus(obs.rate_net.forward(Z)) + _RATE_FLOOR
    terms = X * ad.log(rate) - rate
    out = ad.sum_(terms, axis=(1, 2))
    gl = np.sum(gammaln(X.data + 1.0), axis=(1, 2))
    return out - ad.tensor(gl)


def obs_logdensity(obs, X, Z):
    """Single trial: X (T, d_x), Z (T, d_z) -> float."""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != obs.d_x:
        raise ShapeError(f"observations must be (T, {obs.d_x})")
    if Z.shape != (X.shape[0], obs.d_z):
        raise ShapeError(f"path must be ({X.shape[0]}, {obs.d_z})")
    if obs.kind == "poisson":
        _check_counts(X)
    return float(obs_logdensity_t(obs, ad.tensor(X[None]), ad.tensor(Z[None])).data[0])


def joint_logdensity(model, X, Z):
    """log p(X, Z) = observation term + evolution term, one trial."""
    return obs_logdensity(model.observation, X, Z) + _evo_float(model, Z)


def _evo_float(model, Z):
    Z = np.asarray(Z, dtype=np.float64)
    return float(evolution_logdensity_t(model.evolution, ad.tensor(Z[None])).data[0])


def elbo_estimate(model, X, post, eps):
    """One-sample ELBO: joint at Z = P + L^{-T} eps, plus the child entropy."""
    from .posterior import entropy, sample_posterior

    Z = sample_posterior(post, eps)
    return joint_logdensity(model, X, Z) + entropy(post)
