"""Synthetic chaotic-attractor data, dataset splits, k-step metrics, and a
one-dimensional quadrature demonstration of why the parent normalizer has no
closed form.

Observations are produced by a frozen randomly initialized network applied to
standardized latent states, plus i.i.d. Gaussian noise.  Metrics follow the
summed-squared-error convention: ``mse_k`` returns the sum over valid offsets
(divide by ``n_points`` for a mean); ``r2_k`` pools numerator and denominator
sums before the ratio, which makes the normalization cancel.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dynamics import evolve_mean
from .errors import InvalidConfigError, InvalidDataError, QuadratureDomainError
from .nn import mlp_init


@dataclass
class TrialSet:
    trials: list                      # each (T_i, d_x) float64
    latents: list = None              # optional ground truth, each (T_i, d_latent)
    meta: dict = field(default_factory=dict)
    split_tags: list = None           # per-trial "train" | "test" | "validation"

    @property
    def n_trials(self):
        return len(self.trials)

    @property
    def d_x(self):
        return self.trials[0].shape[-1] if self.trials else 0

    def subset(self, tag):
        idx = [i for i, t in enumerate(self.split_tags or []) if t == tag]
        return TrialSet(
            trials=[self.trials[i] for i in idx],
            latents=[self.latents[i] for i in idx] if self.latents else None,
            meta=dict(self.meta, subset=tag),
            split_tags=[tag] * len(idx),
        )


# -- chaotic latent generator -----------------------------------------------------


def lorenz_field(z, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    z = np.asarray(z, dtype=np.float64)
    return np.array([
        sigma * (z[1] - z[0]),
        z[0] * (rho - z[2]) - z[1],
        z[0] * z[1] - beta * z[2],
    ])


def lorenz_generate(n_trials=100, T=250, dt=0.01, sigma=10.0, rho=28.0,
                    beta=8.0 / 3.0, process_noise_sd=0.1, seed=0):
    """Euler-discretized chaotic trajectories; returns (n_trials, T, 3)."""
    if dt <= 0:
        raise InvalidConfigError("dt must be positive")
    if T < 1 or n_trials < 1:
        raise InvalidConfigError("need n_trials >= 1 and T >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x10)))
    out = np.empty((n_trials, T, 3))
    sq = math.sqrt(dt)
    for i in range(n_trials):
        z = rng.uniform(-10.0, 10.0, size=3)
        out[i, 0] = z
        for t in range(T - 1):
            z = z + dt * lorenz_field(z, sigma, rho, beta)
            if process_noise_sd > 0:
                z = z + process_noise_sd * sq * rng.normal(size=3)
            out[i, t + 1] = z
    return out


def synth_observations(latents, d_x=10, obs_noise_sd=0.05, seed=0,
                       hidden=32):
    """Map latents through a frozen random net and add observation noise.

    The net input is standardized using the pooled mean and standard
    deviation of the latents, which keeps the tanh layer responsive whatever
    the attractor's scale.  Ground-truth latents are kept on the TrialSet.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim == 2:
        latents = latents[None]
    n, T, d_lat = latents.shape
    flat = latents.reshape(-1, d_lat)
    center = flat.mean(axis=0)
    scale = flat.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)

    ss = np.random.SeedSequence((seed, 0x20))
    net_seed, noise_seed = ss.spawn(2)
    net = mlp_init(d_lat, [hidden], d_x, activation="tanh", seed=net_seed)
    rng = np.random.default_rng(noise_seed)
    clean = net.apply((latents - center) / scale)
    noisy = clean + obs_noise_sd * rng.normal(size=clean.shape)
    meta = {
        "d_x": d_x, "obs_noise_sd": obs_noise_sd, "seed": seed,
        "obs_net_hidden": hidden,
        "input_center": center.tolist(), "input_scale": scale.tolist(),
    }
    return TrialSet(trials=[noisy[i] for i in range(n)],
                    latents=[latents[i] for i in range(n)], meta=meta)


def assign_split_tags(tset, fractions=(0.66, 0.17, 0.17), seed=0):
    """Tag every trial "train" | "test" | "validation" by shuffled partition.

    Boundaries are cumulative floors, so 100 trials at (0.66, 0.17, 0.17)
    come out 66/17/17.  A positive fraction that receives zero trials is a
    config error.  Returns a new TrialSet sharing the trial arrays.
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f < 0 for f in fr):
        raise InvalidConfigError("fractions must be three non-negative numbers")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise InvalidConfigError("fractions must sum to 1")
    n = tset.n_trials
    perm = np.random.default_rng(np.random.SeedSequence((seed, 0x30))).permutation(n)
    b1 = int(math.floor(fr[0] * n))
    b2 = int(math.floor((fr[0] + fr[1]) * n))
    parts = [perm[:b1], perm[b1:b2], perm[b2:]]
    names = ("train", "test", "validation")
    for f, p, name in zip(fr, parts, names):
        if f > 0 and len(p) == 0:
            raise InvalidConfigError(f"{name} fraction {f} yields zero trials")
    tags = [None] * n
    for p, name in zip(parts, names):
        for i in p:
            tags[int(i)] = name
    return TrialSet(trials=tset.trials, latents=tset.latents,
                    meta=dict(tset.meta, split_seed=seed,
                              split_fractions=list(fr)),
                    split_tags=tags)


def split(tset, fractions=(0.66, 0.17, 0.17), seed=0):
    """Shuffled partition into (train, test, validation) TrialSets."""
    tagged = assign_split_tags(tset, fractions, seed)
    return (tagged.subset("train"), tagged.subset("test"),
            tagged.subset("validation"))


# -- k-step forward interpolation and metrics ----------------------------------------


def forward_interpolate(model, P, k):
    """Evolve each path point k steps and decode; returns (T - k, d_x).

    k = 0 is plain decoding of the inferred path.
    """
    P = np.asarray(P, dtype=np.float64)
    T = P.shape[0]
    if k < 0:
        raise InvalidConfigError("k must be >= 0")
    if k >= T:
        raise InvalidConfigError(f"k={k} needs trials longer than {k} steps")
    z = evolve_mean(model.evolution, P[:T - k], k=k)
    return model.observation.mean(z)


def _mse_sums(X, xhat, k):
    X = np.asarray(X, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    T = X.shape[0]
    if k < 0 or k >= T:
        raise InvalidConfigError(f"k={k} invalid for a length-{T} trial")
    tail = X[k:]
    if xhat.shape != tail.shape:
        raise InvalidDataError(
            f"prediction shape {xhat.shape} does not match targets {tail.shape}")
    xbar = X.mean(axis=0)
    num = float(np.sum((tail - xhat) ** 2))
    den = float(np.sum((tail - xbar) ** 2))
    return num, den, tail.shape[0] * tail.shape[1]


def mse_k(X, xhat, k):
    """Summed squared k-step error over t = 0..T-k-1 (see module docstring)."""
    num, _, _ = _mse_sums(X, xhat, k)
    return num


def r2_k(X, xhat, k):
    """1 - MSE_k / sum((x_{t+k} - xbar)^2), xbar the full-trial mean vector."""
    num, den, _ = _mse_sums(X, xhat, k)
    return 1.0 - num / den


@dataclass
class EvalReport:
    ks: list
    mse: list                  # pooled summed squared error per k
    r2: list                   # pooled coefficient per k
    n_points: list
    per_trial_r2: list         # list over k of per-trial lists

    def to_rows(self):
        return [{"k": k, "mse": m, "r2": r, "n_points": n}
                for k, m, r, n in zip(self.ks, self.mse, self.r2, self.n_points)]

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("k,mse,r2,n_points\n")
            for row in self.to_rows():
                fh.write(f"{row['k']},{row['mse']!r},{row['r2']!r},"
                         f"{row['n_points']}\n")

    def write_json(self, path):
        payload = {"rows": self.to_rows(), "per_trial_r2": self.per_trial_r2}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_forecasts(model, trials, paths, ks):
    """Pooled EvalReport over trials; paths are the inferred latent means."""
    ks = list(ks)
    mse, r2, npts, per_trial = [], [], [], []
    for k in ks:
        num = den = cnt = 0
        trial_vals = []
        for X, P in zip(trials, paths):
            xhat = forward_interpolate(model, P, k)
            a, b, c = _mse_sums(X, xhat, k)
            num += a
            den += b
            cnt += c
            trial_vals.append(1.0 - a / b)
        mse.append(num)
        r2.append(1.0 - num / den)
        npts.append(cnt)
        per_trial.append(trial_vals)
    return EvalReport(ks=ks, mse=mse, r2=r2, n_points=npts,
                      per_trial_r2=per_trial)


# -- TrialSet persistence --------------------------------------------------------------


def save_trialset(out_dir, tset):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "n_trials": tset.n_trials,
        "d_x": tset.d_x,
        "T": [int(x.shape[0]) for x in tset.trials],
        "has_latents": tset.latents is not None,
        "d_latent": (int(tset.latents[0].shape[-1]) if tset.latents else None),
        "split_tags": tset.split_tags,
        "meta": tset.meta,
    }
    for i, x in enumerate(tset.trials):
        np.ascontiguousarray(x, dtype="<f8").tofile(
            os.path.join(out_dir, f"trial_{i:04d}.f64"))
    if tset.latents is not None:
        for i, z in enumerate(tset.latents):
            np.ascontiguousarray(z, dtype="<f8").tofile(
                os.path.join(out_dir, f"latent_{i:04d}.f64"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trialset(out_dir):
    mpath = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(mpath):
        raise InvalidDataError(f"no manifest.json under {out_dir}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    d_x = manifest["d_x"]
    trials, latents = [], []
    for i, T in enumerate(manifest["T"]):
        a = np.fromfile(os.path.join(out_dir, f"trial_{i:04d}.f64"), dtype="<f8")
        if a.size != T * d_x:
            raise InvalidDataError(f"trial_{i:04d}.f64 has {a.size} values, "
                                   f"expected {T * d_x}")
        trials.append(a.reshape(T, d_x).astype(np.float64))
        if manifest["has_latents"]:
            d_l = manifest["d_latent"]
            z = np.fromfile(os.path.join(out_dir, f"latent_{i:04d}.f64"),
                            dtype="<f8")
            latents.append(z.reshape(T, d_l).astype(np.float64))
    return TrialSet(trials=trials,
                    latents=latents if manifest["has_latents"] else None,
                    meta=manifest.get("meta", {}),
                    split_tags=manifest.get("split_tags"))


# -- quadrature demonstration ----------------------------------------------------------


@dataclass
class IntractabilityReport:
    kappa_inv_quadrature: float
    kappa_inv_ansatz: float
    rel_deviation: float
    refinement_delta: float
    n_nodes: int
    domain: tuple
    tail_mass: float


def _two_step_integrand(a_map, m0, m1):
    """Density product h(z0) g(z0|x0) I(z0|x1) with unit variances.

    I(z0|x1) integrates the transition against the second recognition
    factor: (1/sqrt(2)) exp(-(a(z0) - m1)^2 / 4).
    """
    c = 1.0 / (2.0 * math.pi)          # the two explicit unit normals

    def f(z0):
        a = a_map(z0)
        return (c / math.sqrt(2.0)) * np.exp(
            -0.5 * z0 ** 2 - 0.5 * (z0 - m0) ** 2 - 0.25 * (a - m1) ** 2)

    return f


def _gaussian_ansatz_value(slope, intercept, m0, m1):
    """Closed form of the integral when a(z) = slope*z + intercept.

    The exponent is a quadratic q2 z^2 + q1 z + q0; the Gaussian integral
    gives sqrt(pi / q2) * exp(q1^2 / (4 q2) - q0) times the prefactor.
    """
    q2 = 0.5 + 0.5 + 0.25 * slope ** 2
    q1 = -m0 + 0.5 * slope * (intercept - m1)
    q0 = 0.5 * m0 ** 2 + 0.25 * (intercept - m1) ** 2
    pref = 1.0 / (2.0 * math.pi * math.sqrt(2.0))
    return pref * math.sqrt(math.pi / q2) * math.exp(q1 * q1 / (4.0 * q2) - q0)


def toy_intractability_demo(a_map=None, m0=0.5, m1=-0.3, half_width=12.0,
                            n_nodes=4097):
    """Quadrature normalizer of the two-step parent vs the Gaussian ansatz.

    The ansatz linearizes a at 0.  For linear a the two agree to quadrature
    accuracy; any curvature in a shows up as a relative deviation.
    """
    from scipy.integrate import simpson

    if a_map is None:
        a_map = lambda z: z
    if n_nodes < 4001:
        raise InvalidConfigError("need at least 4001 quadrature nodes")
    if n_nodes % 2 == 0:
        n_nodes += 1
    f = _two_step_integrand(a_map, m0, m1)

    grid = np.linspace(-half_width, half_width, n_nodes)
    vals = f(grid)
    kappa_inv = float(simpson(vals, x=grid))

    # mass just outside the domain; nonnegligible means the domain is too narrow
    ext = np.linspace(half_width, half_width + 8.0, 801)
    tail = float(simpson(f(ext), x=ext) + simpson(f(-ext[::-1]), x=-ext[::-1]))
    if tail > 1e-10:
        raise QuadratureDomainError(
            f"tail mass {tail:.3e} outside [-{half_width}, {half_width}]; "
            f"widen the domain")

    fine_grid = np.linspace(-half_width, half_width, 2 * n_nodes - 1)
    kappa_fine = float(simpson(f(fine_grid), x=fine_grid))

    h = 1e-6
    slope = (a_map(h) - a_map(-h)) / (2.0 * h)
    intercept = float(a_map(0.0))
    ansatz = _gaussian_ansatz_value(float(slope), intercept, m0, m1)

    return IntractabilityReport(
        kappa_inv_quadrature=kappa_inv,
        kappa_inv_ansatz=ansatz,
        rel_deviation=abs(kappa_inv - ansatz) / abs(ansatz),
        refinement_delta=abs(kappa_fine - kappa_inv),
        n_nodes=n_nodes,
        domain=(-half_width, half_width),
        tail_mass=tail,
    )
