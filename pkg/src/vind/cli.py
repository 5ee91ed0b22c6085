"""Command-line front end.

Subcommands: generate, fit, eval, demo-intractability, print-defaults.
Configuration is a single YAML tree; unknown keys are rejected with the full
dotted path named.  Every command writes a manifest embedding the effective
config, its sha256, and the package version, so runs are reproducible from
their artifacts alone.

Exit codes: 0 success, 1 I/O or data error, 2 config error, 3 training
diverged.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from . import __version__
from . import dataeval as de
from .errors import (InvalidConfigError, InvalidDataError,
                     TrainingDivergedError, VindError)
from .posterior import posterior_from_solve
from .serialize import load_checkpoint, save_checkpoint
from .training import TrainConfig, fit, init_state

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


@dataclass
class GenerateConfig:
    n_trials: int = 100
    T: int = 250
    dt: float = 0.01
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    process_noise_sd: float = 0.1
    d_x: int = 10
    obs_noise_sd: float = 0.05
    obs_net_hidden: int = 32
    fractions: tuple = (0.66, 0.17, 0.17)
    save_latents: bool = True

    def validate(self):
        if self.n_trials < 1 or self.T < 1:
            raise InvalidConfigError("generate.n_trials and generate.T must be >= 1")
        if self.dt <= 0:
            raise InvalidConfigError("generate.dt must be positive")
        if self.d_x < 1:
            raise InvalidConfigError("generate.d_x must be >= 1")
        if self.obs_noise_sd < 0 or self.process_noise_sd < 0:
            raise InvalidConfigError("noise magnitudes must be >= 0")
        return self


@dataclass
class EvalConfig:
    k_max: int = 30
    splits: tuple = ("train", "test", "validation")
    fpi_iters: int = 100
    fpi_tol: float = 1e-8

    def validate(self):
        if self.k_max < 0:
            raise InvalidConfigError("eval.k_max must be >= 0")
        if self.fpi_iters < 1:
            raise InvalidConfigError("eval.fpi_iters must be >= 1")
        known = {"train", "test", "validation", "all"}
        for s in self.splits:
            if s not in known:
                raise InvalidConfigError(f"eval.splits entry '{s}' is not one of {sorted(known)}")
        return self


@dataclass
class DemoConfig:
    m0: float = 0.5
    m1: float = -0.3
    half_width: float = 12.0
    n_nodes: int = 4097
    tanh_scale: float = 0.5

    def validate(self):
        if self.half_width <= 0:
            raise InvalidConfigError("demo.half_width must be positive")
        return self


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/vind"
    dataset: str = ""            # fit/eval input; empty means <out>/dataset
    checkpoint: str = ""         # eval input; empty means <out>/checkpoint.bin
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    demo: DemoConfig = field(default_factory=DemoConfig)

    def validate(self):
        self.generate.validate()
        self.train.validate()
        self.eval.validate()
        self.demo.validate()
        return self


def default_config():
    return RunConfig()


def config_to_dict(cfg):
    """Plain dict with tuples as lists; inverse of the YAML reading path."""

    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    return conv(cfg)


def _apply_update(obj, data, path=""):
    """Copy keys of a nested dict onto a dataclass tree, rejecting unknowns."""
    if not isinstance(data, dict):
        where = path or "top level"
        raise InvalidConfigError(f"{where} must be a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        full = f"{path}.{key}" if path else key
        if key not in known:
            raise InvalidConfigError(f"unknown config key '{full}'")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            _apply_update(cur, value, full)
            continue
        if isinstance(cur, tuple):
            if not isinstance(value, (list, tuple)):
                raise InvalidConfigError(f"config key '{full}' must be a list")
            value = tuple(value)
        elif isinstance(cur, bool):
            if not isinstance(value, bool):
                raise InvalidConfigError(f"config key '{full}' must be a boolean")
        elif isinstance(cur, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        setattr(obj, key, value)


def load_config(config_path=None, seed=None, out=None):
    cfg = default_config()
    if config_path is not None:
        with open(config_path) as fh:
            try:
                data = yaml.safe_load(fh)
            except yaml.YAMLError as e:
                raise InvalidConfigError(f"could not parse {config_path}: {e}")
        if data is not None:
            _apply_update(cfg, data)
    if seed is not None:
        cfg.seed = int(seed)
        cfg.train.seed = int(seed)
    if out is not None:
        cfg.out = out
    return cfg.validate()


def config_hash(cfg):
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_manifest(cfg, command, outputs):
    payload = {
        "command": command,
        "version": __version__,
        "config_sha256": config_hash(cfg),
        "config": config_to_dict(cfg),
        "outputs": sorted(outputs),
    }
    name = command.replace("-", "_") + "_manifest.json"
    path = os.path.join(cfg.out, name)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _dataset_dir(cfg):
    return cfg.dataset or os.path.join(cfg.out, "dataset")


def _checkpoint_path(cfg):
    return cfg.checkpoint or os.path.join(cfg.out, "checkpoint.bin")


# -- commands ---------------------------------------------------------------------


def cmd_generate(cfg):
    g = cfg.generate
    latents = de.lorenz_generate(
        n_trials=g.n_trials, T=g.T, dt=g.dt, sigma=g.sigma, rho=g.rho,
        beta=g.beta, process_noise_sd=g.process_noise_sd, seed=cfg.seed)
    tset = de.synth_observations(latents, d_x=g.d_x, obs_noise_sd=g.obs_noise_sd,
                                 seed=cfg.seed, hidden=g.obs_net_hidden)
    tset.meta.update({
        "generator": "lorenz-euler", "n_trials": g.n_trials, "T": g.T,
        "dt": g.dt, "sigma": g.sigma, "rho": g.rho, "beta": g.beta,
        "process_noise_sd": g.process_noise_sd,
    })
    tagged = de.assign_split_tags(tset, g.fractions, seed=cfg.seed)
    if not g.save_latents:
        tagged.latents = None
    out_dir = _dataset_dir(cfg)
    de.save_trialset(out_dir, tagged)
    _write_manifest(cfg, "generate", [os.path.relpath(out_dir, cfg.out)])
    print(f"wrote {tagged.n_trials} trials to {out_dir}")
    return EXIT_OK


def _training_trials(tset):
    if tset.split_tags and any(t == "train" for t in tset.split_tags):
        return tset.subset("train").trials
    return tset.trials


def _history_csv(path, cfg_alpha, history):
    label = "gflds" if cfg_alpha == 0.0 else "vind"
    with open(path, "w") as fh:
        fh.write(f"# model={label}\n")
        fh.write("epoch,elbo,smoothness,contraction,fpi_residual,"
                 "n_rollbacks,n_excluded\n")
        for r in history:
            fh.write(f"{r.epoch},{float(r.elbo)!r},{float(r.smoothness)!r},"
                     f"{float(r.contraction)!r},{float(r.fpi_residual)!r},"
                     f"{r.n_rollbacks},{r.n_excluded}\n")


def _configs_compatible(old, new):
    """Resume allows a longer epoch budget; everything else must match."""
    a, b = dataclasses.asdict(old), dataclasses.asdict(new)
    a.pop("epochs"), b.pop("epochs")
    return a == b


def cmd_fit(cfg, resume=False):
    tset = de.load_trialset(_dataset_dir(cfg))
    trials = _training_trials(tset)
    ck_path = _checkpoint_path(cfg)
    hist_path = os.path.join(cfg.out, "history.csv")

    if resume:
        state = load_checkpoint(ck_path)
        if not _configs_compatible(state.config, cfg.train):
            raise InvalidConfigError(
                "resume config differs from the checkpoint in more than epochs")
        state.config.epochs = cfg.train.epochs
    else:
        state = init_state(cfg.train, trials)

    try:
        fit(state.config, trials, state=state)
    except TrainingDivergedError as e:
        if e.history:
            _history_csv(hist_path, cfg.train.alpha, e.history)
        raise
    save_checkpoint(ck_path, state)
    _history_csv(hist_path, cfg.train.alpha, state.history)
    _write_manifest(cfg, "fit", [os.path.relpath(p, cfg.out)
                                 for p in (ck_path, hist_path)])
    last = state.history[-1].elbo if state.history else float("nan")
    print(f"fit complete: {state.epoch} epochs, final elbo {last:.4f}")
    return EXIT_OK


def cmd_eval(cfg):
    state = load_checkpoint(_checkpoint_path(cfg))
    model = state.model
    tset = de.load_trialset(_dataset_dir(cfg))
    ev = cfg.eval
    ks = list(range(ev.k_max + 1))

    if tset.split_tags:
        parts = [(s, tset.subset(s)) for s in ev.splits]
        parts = [(s, p) for s, p in parts if p.n_trials > 0]
    else:
        parts = [("all", tset)]
    if not parts:
        raise InvalidConfigError("no requested split has any trials")

    outputs = []
    for name, part in parts:
        paths = [posterior_from_solve(model, x, n_iters=ev.fpi_iters,
                                      tol=ev.fpi_tol)[0].p for x in part.trials]
        report = de.evaluate_forecasts(model, part.trials, paths, ks)
        cpath = os.path.join(cfg.out, f"eval_{name}.csv")
        jpath = os.path.join(cfg.out, f"eval_{name}.json")
        report.write_csv(cpath)
        report.write_json(jpath)
        outputs += [os.path.relpath(cpath, cfg.out), os.path.relpath(jpath, cfg.out)]
        print(f"{name}: r2[k=0] = {report.r2[0]:.4f} over {part.n_trials} trials")
    _write_manifest(cfg, "eval", outputs)
    return EXIT_OK


def cmd_demo_intractability(cfg):
    d = cfg.demo
    linear = de.toy_intractability_demo(
        a_map=None, m0=d.m0, m1=d.m1, half_width=d.half_width, n_nodes=d.n_nodes)
    scale = d.tanh_scale
    nonlinear = de.toy_intractability_demo(
        a_map=lambda z: z + scale * np.tanh(z),
        m0=d.m0, m1=d.m1, half_width=d.half_width, n_nodes=d.n_nodes)
    payload = {
        "linear": dataclasses.asdict(linear),
        "nonlinear_tanh": dataclasses.asdict(nonlinear),
        "nonlinearity": f"z + {scale}*tanh(z)",
    }
    path = os.path.join(cfg.out, "intractability.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(cfg, "demo-intractability", [os.path.relpath(path, cfg.out)])
    print(f"linear rel dev {linear.rel_deviation:.2e}, "
          f"nonlinear rel dev {nonlinear.rel_deviation:.4f}")
    return EXIT_OK


def cmd_print_defaults():
    sys.stdout.write(yaml.safe_dump(config_to_dict(default_config()),
                                    sort_keys=True, default_flow_style=False))
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config file")
    common.add_argument("--seed", type=int, default=None,
                        help="override every seed in the config")
    common.add_argument("--out", default=None, help="output directory")

    parser = argparse.ArgumentParser(
        prog="vind",
        description="Latent nonlinear dynamics: data synthesis, fitting, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common],
                   help="synthesize a chaotic-latent dataset")
    pfit = sub.add_parser("fit", parents=[common], help="train a model")
    pfit.add_argument("--resume", action="store_true",
                      help="continue from the existing checkpoint")
    sub.add_parser("eval", parents=[common],
                   help="k-step forecast metrics per split")
    sub.add_parser("demo-intractability", parents=[common],
                   help="quadrature vs Gaussian-ansatz normalizer demo")
    sub.add_parser("print-defaults", help="print the full default config")
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "print-defaults":
        return cmd_print_defaults()
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        os.makedirs(cfg.out, exist_ok=True)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "demo-intractability":
            return cmd_demo_intractability(cfg)
        parser.error(f"unhandled command {args.command}")
    except InvalidConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidDataError, FileNotFoundError, IsADirectoryError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except VindError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
