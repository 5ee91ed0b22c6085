"""Alternating path refinement and gradient ascent on the one-sample ELBO.

Each epoch does, per trial:

1. one differentiable fixed-point application from the cached path, giving
   the mean P and (reusing the same factorization) the child precision,
2. one reparameterized sample Z = P + L^{-T} eps,
3. the one-sample ELBO (joint at Z plus child entropy).

The per-trial ELBOs are summed and a single adaptive-moment ascent step is
applied to all parameters.  Afterwards each cached path is refreshed with up
to ``n_fpis`` further applications under the new parameters, starting from
the value the in-graph application produced.  Gradients flow through the one
in-graph application and the sampled joint, never through the cached path.

Trials whose in-graph precision fails to factor are excluded from that
epoch's update and keep their cached path.  A refresh failure retries with
the nonlinearity scaled down by half, up to ``max_rollbacks`` times, then
keeps the previous path.  Both events are counted in the history.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import blocktri as bt
from .dynamics import a_field, evolution_logdensity_t, s_blocks_t, a_field_t
from .errors import (
    InvalidConfigError,
    InvalidDataError,
    NotPositiveDefiniteError,
    TrainingDivergedError,
)
from .generative import obs_logdensity_t, _check_counts
from .model import init_model
from .posterior import (
    contraction_bound,
    laplace_posterior,
    laplace_precision,
    make_alpha_scaled,
    refine_paths,
)
from .recognition import encode_t

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class TrainConfig:
    d_z: int = 3
    alpha: float = 0.1
    learning_rate: float = 3e-3
    epochs: int = 200
    n_fpis: int = 2
    batch_size: int = 0              # 0 = all trials per update
    seed: int = 0
    obs_model: str = "gaussian"
    rec_widths: tuple = (32, 32)
    b_widths: tuple = (32, 32)
    obs_widths: tuple = (32, 32)
    b_output_scale: float = 1e-2
    fpi_tol: float = 1e-6
    smoothness_warn: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_rollbacks: int = 3
    contraction_probes: int = 4
    ma_window: int = 20
    early_stop_patience: int = 0     # 0 = run the full epoch budget
    early_stop_tol: float = 0.0
    threads: int = 1

    def validate(self):
        if self.d_z < 1:
            raise InvalidConfigError("d_z must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise InvalidConfigError("epochs must be >= 0")
        if self.n_fpis < 0:
            raise InvalidConfigError("n_fpis must be >= 0")
        if self.batch_size < 0:
            raise InvalidConfigError("batch_size must be >= 0")
        if self.alpha < 0:
            raise InvalidConfigError("alpha must be >= 0")
        if self.obs_model not in ("gaussian", "poisson"):
            raise InvalidConfigError(f"unknown observation model '{self.obs_model}'")
        if self.threads < 1:
            raise InvalidConfigError("threads must be >= 1")
        return self


@dataclass
class EpochRecord:
    epoch: int
    elbo: float                 # summed one-sample ELBO over included trials
    smoothness: float
    contraction: float
    fpi_residual: float         # max refresh step over trials (nan if n_fpis=0)
    n_rollbacks: int
    n_excluded: int


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


@dataclass
class TrainState:
    config: TrainConfig
    model: object
    adam: AdamState
    paths: list                 # per-trial cached (T_i, d_z) arrays
    epoch: int = 0
    history: list = field(default_factory=list)


def _as_trials(trials):
    out = [np.asarray(x, dtype=np.float64) for x in trials]
    if not out:
        raise InvalidDataError("need at least one trial")
    d_x = out[0].shape[-1]
    for i, x in enumerate(out):
        if x.ndim != 2 or x.shape[-1] != d_x:
            raise InvalidDataError(f"trial {i} is not (T, {d_x})")
    return out, d_x


def init_state(config, trials):
    """Deterministic model init plus encoder-mean starting paths."""
    config.validate()
    trials, d_x = _as_trials(trials)
    if config.obs_model == "poisson":
        for x in trials:
            _check_counts(x)
    model = init_model(d_x, config.d_z, config.alpha, obs_model=config.obs_model,
                       rec_widths=config.rec_widths, b_widths=config.b_widths,
                       obs_widths=config.obs_widths,
                       b_output_scale=config.b_output_scale, seed=config.seed)
    paths = [model.recognition.mu_net.apply(x) for x in trials]
    state = TrainState(config=config, model=model,
                       adam=AdamState(m=[np.zeros_like(p.data) for p in model.param_tensors()],
                                      v=[np.zeros_like(p.data) for p in model.param_tensors()]),
                       paths=paths)
    s = smoothness_monitor(model, paths)
    if s > config.smoothness_warn:
        warnings.warn(f"initial dynamics smoothness {s:.3f} exceeds "
                      f"{config.smoothness_warn}; consider a smaller alpha or "
                      f"b-net output scale")
    return state


def smoothness_monitor(model, paths):
    """max over paths and time of max-entry |A(z_t) - I|."""
    d = model.d_z
    eye = np.eye(d)
    worst = 0.0
    for p in paths:
        A = a_field(model.evolution, np.asarray(p, dtype=np.float64))
        worst = max(worst, float(np.max(np.abs(A - eye))))
    return worst


def _trial_eps(seed, trial_index, epoch, shape):
    ss = np.random.SeedSequence((seed, trial_index, epoch))
    return np.random.default_rng(ss).normal(size=shape)


def _group_by_length(indices, trials):
    groups = {}
    for i in indices:
        groups.setdefault(trials[i].shape[0], []).append(i)
    return [groups[k] for k in sorted(groups)]


def _batch_elbo_graph(model, X, P_prev, eps):
    """Summed one-sample ELBO for equal-length trials; returns (loss, P_new).

    X, P_prev, eps are (B, T, *) numpy constants.  The graph runs one
    fixed-point application from P_prev, freezes the child precision at the
    same point (reusing the factorization), samples, and sums joint + entropy.
    """
    evo = model.evolution
    B, T, d = P_prev.shape
    m, lam = encode_t(model.recognition, ad.tensor(X))
    if T == 1:
        A = ad.tensor(np.zeros((B, 0, d, d)))
    else:
        A = a_field_t(evo, ad.tensor(P_prev[:, :T - 1]))
    s_diag, s_lower = s_blocks_t(evo, A, T, include_prior=True)
    c_diag = s_diag + ad.diag_embed(lam)
    rhs0 = lam[:, :1] * m[:, :1] + ad.exp(evo.gamma0_log) * evo.a0
    if T > 1:
        rhs = ad.concat([rhs0, lam[:, 1:] * m[:, 1:]], axis=1)
    else:
        rhs = rhs0
    Ld, Ls = bt.factor_t(c_diag, s_lower)
    P = bt.solve_t(Ld, Ls, rhs)
    Z = P + bt.sqrt_solve_t(Ld, Ls, ad.tensor(eps))
    ent = 0.5 * T * d * (1.0 + LOG_2PI) - 0.5 * bt.logdet_t(Ld)
    joint = obs_logdensity_t(model.observation, ad.tensor(X), Z) + \
        evolution_logdensity_t(evo, Z)
    return ad.sum_(joint + ent), P


def _factorable(model, x, p):
    """Whether C = Lambda + S(p) factors for this single trial."""
    try:
        bt.factor(laplace_precision(model, x, p))
        return True
    except NotPositiveDefiniteError:
        return False


def _group_graph(model, state, trials, group, epoch):
    """Build the ELBO graph for equal-length trials, dropping unfactorable ones.

    Optimistic: the batched factorization is attempted first; only on failure
    are trials probed one by one.  Returns (loss, P_new, kept indices); loss
    and P_new are None when nothing survives.
    """
    cfg = state.config
    kept = list(group)
    for _ in range(2):
        if not kept:
            return None, None, []
        X = np.stack([trials[i] for i in kept])
        P_prev = np.stack([state.paths[i] for i in kept])
        eps = np.stack([_trial_eps(cfg.seed, i, epoch, P_prev.shape[1:])
                        for i in kept])
        try:
            loss, P_new = _batch_elbo_graph(model, X, P_prev, eps)
            return loss, P_new, kept
        except NotPositiveDefiniteError:
            kept = [i for i in kept
                    if _factorable(model, trials[i], state.paths[i])]
    return None, None, []


def _refresh_one(model, x, p_start, p_fallback, n_apps, tol, max_rollbacks):
    """Refresh one cached path; returns (path, residual, rollbacks)."""
    scale = 1.0
    for attempt in range(max_rollbacks + 1):
        try:
            m = make_alpha_scaled(model, scale) if scale != 1.0 else model
            p = p_start
            resid = float("nan")
            for _ in range(n_apps):
                p_new = refine_paths(m, x[None], p[None], n_apps=1)[0]
                resid = float(np.max(np.abs(p_new - p)))
                p = p_new
                if resid <= tol:
                    break
            return p, resid, attempt
        except NotPositiveDefiniteError:
            scale *= 0.5
    return p_fallback, float("nan"), max_rollbacks + 1


def train_epoch(state, trials):
    """One pass of sample, update, refresh; appends an EpochRecord."""
    cfg = state.config
    model = state.model
    trials, _ = _as_trials(trials)
    n = len(trials)
    if len(state.paths) != n:
        raise InvalidDataError("cached path count does not match trial count")
    epoch = state.epoch
    order = list(range(n))
    batches = [order] if cfg.batch_size == 0 else \
        [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]

    elbo_total = 0.0
    n_excluded = 0
    refreshed = dict()            # trial index -> in-graph P value
    for batch in batches:
        for p in model.param_tensors():
            p.grad = None
        loss_val = 0.0
        group_outputs = []
        for group in _group_by_length(batch, trials):
            loss, P_new, kept = _group_graph(model, state, trials, group, epoch)
            n_excluded += len(group) - len(kept)
            if not kept:
                continue
            loss.backward()
            loss_val += float(loss.data)
            group_outputs.append((kept, P_new.data))
        if not group_outputs:
            continue
        if not np.isfinite(loss_val):
            raise TrainingDivergedError(
                f"non-finite ELBO at epoch {epoch}", history=state.history)
        _adam_step(state, cfg)
        elbo_total += loss_val
        for kept, P_new in group_outputs:
            for j, i in enumerate(kept):
                refreshed[i] = P_new[j]

    if len(refreshed) == 0:
        raise TrainingDivergedError(
            f"every trial failed to factor at epoch {epoch}", history=state.history)

    # refresh cached paths under the new parameters
    n_rollbacks = 0
    worst_resid = float("nan")
    if cfg.n_fpis > 0:
        resids = []
        fallback = []
        for group in _group_by_length(sorted(refreshed), trials):
            X = np.stack([trials[i] for i in group])
            P = np.stack([refreshed[i] for i in group])
            try:
                resid = float("nan")
                for _ in range(cfg.n_fpis):
                    P_next = refine_paths(model, X, P, n_apps=1)
                    resid = float(np.max(np.abs(P_next - P)))
                    P = P_next
                    if resid <= cfg.fpi_tol:
                        break
                for j, i in enumerate(group):
                    state.paths[i] = P[j]
                resids.append(resid)
            except NotPositiveDefiniteError:
                fallback.extend(group)

        def job(i):
            return _refresh_one(model, trials[i], refreshed[i], state.paths[i],
                                cfg.n_fpis, cfg.fpi_tol, cfg.max_rollbacks)

        if fallback:
            if cfg.threads > 1:
                with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
                    results = list(ex.map(job, fallback))
            else:
                results = [job(i) for i in fallback]
            for i, (p, resid, rb) in zip(fallback, results):
                state.paths[i] = p
                n_rollbacks += rb
                if np.isfinite(resid):
                    resids.append(resid)
        if resids:
            worst_resid = max(resids)
    else:
        for i, p in refreshed.items():
            state.paths[i] = p

    probe = epoch % n
    record = EpochRecord(
        epoch=epoch,
        elbo=elbo_total,
        smoothness=smoothness_monitor(model, state.paths),
        contraction=contraction_bound(model, trials[probe], state.paths[probe],
                                      probes=cfg.contraction_probes,
                                      seed=(cfg.seed, epoch)),
        fpi_residual=worst_resid,
        n_rollbacks=n_rollbacks,
        n_excluded=n_excluded,
    )
    state.history.append(record)
    state.epoch += 1
    return state


def _adam_step(state, cfg):
    adam = state.adam
    adam.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** adam.t
    c2 = 1.0 - b2 ** adam.t
    for k, p in enumerate(state.model.param_tensors()):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * g
        adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * g * g
        p.data += cfg.learning_rate * (adam.m[k] / c1) / \
            (np.sqrt(adam.v[k] / c2) + cfg.adam_eps)


def moving_average(values, window):
    """Trailing moving average; shorter prefixes average what exists."""
    out = np.empty(len(values))
    acc = 0.0
    vals = list(values)
    for i, v in enumerate(vals):
        acc += v
        if i >= window:
            acc -= vals[i - window]
        out[i] = acc / min(i + 1, window)
    return out


def fit(config, trials, state=None, epoch_callback=None):
    """Run the training loop; returns (model, per-trial posteriors, history).

    Pass ``state`` to resume.  Early stop (off by default) triggers when the
    moving-average ELBO has not improved by ``early_stop_tol`` for
    ``early_stop_patience`` consecutive epochs.
    """
    trials, _ = _as_trials(trials)
    if state is None:
        state = init_state(config, trials)
    cfg = state.config
    best_ma = -np.inf
    stale = 0
    while state.epoch < cfg.epochs:
        train_epoch(state, trials)
        if epoch_callback is not None:
            epoch_callback(state)
        if cfg.early_stop_patience > 0:
            ma = moving_average([r.elbo for r in state.history], cfg.ma_window)[-1]
            if ma > best_ma + cfg.early_stop_tol:
                best_ma = ma
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    posteriors = [laplace_posterior(state.model, x, p)
                  for x, p in zip(trials, state.paths)]
    return state.model, posteriors, state.history
