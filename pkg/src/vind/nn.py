"""Dense feed-forward networks and gradient checking utilities.

Weights are stored as (out, in) matrices.  Initialization is uniform on
+-sqrt(6 / (fan_in + fan_out)) with zero biases; the final layer's weights
are multiplied by ``output_scale`` so a network can start arbitrarily close
to (or exactly at) a constant function.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidConfigError, ShapeError

_ACTIVATIONS = {"tanh": ad.tanh, "softplus": ad.softplus}


@dataclass
class Mlp:
    in_dim: int
    widths: list
    out_dim: int
    activation: str
    weights: list = field(default_factory=list)   # Tensor (out, in) per layer
    biases: list = field(default_factory=list)    # Tensor (out,) per layer

    def forward(self, x):
        """Tensor (…, in_dim) -> Tensor (…, out_dim), tape-recorded."""
        x = ad.tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected trailing dim {self.in_dim}, got {x.shape[-1]}")
        act = _ACTIVATIONS[self.activation]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.matmul(h, ad.mT(w)) + b
            if i < last:
                h = act(h)
        return h

    def apply(self, x):
        """Plain numpy forward pass over any leading batch axes."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected trailing dim {self.in_dim}, got {x.shape[-1]}")
        if self.activation == "tanh":
            act = np.tanh
        else:
            act = lambda u: np.logaddexp(0.0, u)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data.T + b.data
            if i < last:
                h = act(h)
        return h

    def parameters(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"w{i}", w))
            out.append((f"b{i}", b))
        return out

    @property
    def n_params(self):
        return sum(w.data.size + b.data.size for w, b in zip(self.weights, self.biases))


def mlp_init(in_dim, widths, out_dim, activation="tanh", seed=0, output_scale=1.0):
    """Build an Mlp with deterministic uniform Xavier init.

    ``output_scale == 0`` makes the network output its final bias (zeros)
    for every input.
    """
    if activation not in _ACTIVATIONS:
        raise InvalidConfigError(f"unknown activation '{activation}'")
    if in_dim < 1 or out_dim < 1 or any(w < 1 for w in widths):
        raise InvalidConfigError("layer dims must be positive")
    rng = np.random.default_rng(seed)
    dims = [in_dim] + list(widths) + [out_dim]
    net = Mlp(in_dim=in_dim, widths=list(widths), out_dim=out_dim, activation=activation)
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if i == len(dims) - 2:
            w = w * output_scale
        net.weights.append(ad.parameter(w))
        net.biases.append(ad.parameter(np.zeros(fan_out)))
    return net


@dataclass
class GradBundle:
    """Objective value plus the gradient flattened in parameter order."""
    value: float
    grad: np.ndarray


def flatten_params(params):
    return np.concatenate([p.data.ravel() for p in params]) if params else np.zeros(0)


def set_flat_params(params, vec):
    vec = np.asarray(vec, dtype=np.float64)
    need = sum(p.data.size for p in params)
    if vec.size != need:
        raise ShapeError(f"flat vector has {vec.size} entries, parameters need {need}")
    off = 0
    for p in params:
        n = p.data.size
        p.data = vec[off:off + n].reshape(p.data.shape).copy()
        off += n


def grad_scalar(objective, params):
    """Evaluate a scalar objective and its gradient w.r.t. ``params``.

    ``objective`` is a zero-argument callable returning a scalar Tensor; it
    must read the current ``.data`` of the parameter tensors so it can be
    re-evaluated after they change.  Non-finite intermediates raise
    NumericalError naming the offending op.
    """
    for p in params:
        p.grad = None
    with ad.finite_checks():
        out = objective()
    if out.data.size != 1:
        raise ShapeError("objective must return a scalar")
    out.backward()
    grads = [p.grad if p.grad is not None else np.zeros(p.data.shape) for p in params]
    flat = np.concatenate([g.ravel() for g in grads]) if grads else np.zeros(0)
    return GradBundle(value=float(out.data), grad=flat)


def finite_diff_check(objective, params, step=1e-5):
    """Max relative error between the tape gradient and central differences.

    Per-component step is ``step * (1 + |p|)``; the relative-error
    denominator is ``max(|analytic|, |numeric|, 1e-12)``.
    """
    bundle = grad_scalar(objective, params)
    worst = 0.0
    k = 0
    for p in params:
        flat_view = p.data.ravel()
        for i in range(flat_view.size):
            orig = flat_view[i]
            h = step * (1.0 + abs(orig))
            flat_view[i] = orig + h
            f_plus = float(objective().data)
            flat_view[i] = orig - h
            f_minus = float(objective().data)
            flat_view[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = bundle.grad[k]
            denom = max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, abs(analytic - numeric) / denom)
            k += 1
    return worst
