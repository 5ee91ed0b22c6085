"""Binary container for models, checkpoints, and other array bundles.

Layout: 8-byte magic, 4-byte little-endian header length, UTF-8 JSON header,
then the concatenation of all arrays as raw little-endian float64, C order.
The header lists every array's name, shape, and byte offset into the blob,
plus a free-form ``meta`` dict.  Nothing time- or host-dependent is written,
so identical inputs produce byte-identical files.
"""

import json
import struct
from dataclasses import asdict

import numpy as np

from .errors import InvalidDataError

MAGIC = b"VINDBIN1"
FORMAT_VERSION = 1


def write_bundle(path, arrays, meta, kind):
    """arrays: list of (name, float ndarray); meta must be JSON-serializable."""
    entries = []
    offset = 0
    blobs = []
    for name, a in arrays:
        a = np.asarray(a, dtype="<f8")
        shape = list(a.shape)          # before ascontiguousarray, which makes 0-d into (1,)
        a = np.ascontiguousarray(a)
        entries.append({"name": name, "shape": shape, "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "kind": kind,
         "arrays": entries, "meta": meta},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_bundle(path, expect_kind=None):
    """Returns (dict name -> ndarray, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise InvalidDataError(f"{path} is not a model/checkpoint bundle")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if 12 + hlen > len(raw):
        raise InvalidDataError(f"{path} is truncated")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidDataError(
            f"unsupported format version {header.get('format_version')}")
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise InvalidDataError(
            f"expected a {expect_kind} bundle, found {header.get('kind')}")
    blob = raw[12 + hlen:]
    out = {}
    for e in header["arrays"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape))
        start = e["offset"]
        a = np.frombuffer(blob, dtype="<f8", count=n, offset=start)
        out[e["name"]] = a.reshape(shape).astype(np.float64)
    return out, header["meta"]


# -- model ------------------------------------------------------------------------


def _model_structure(model):
    obs = model.observation
    s = {
        "d_x": model.d_x,
        "d_z": model.d_z,
        "alpha": model.evolution.alpha,
        "obs_model": obs.kind,
        "rec_widths": list(model.recognition.mu_net.widths),
        "b_widths": list(model.evolution.b_net.widths),
        "obs_widths": list((obs.m_net if obs.kind == "gaussian" else obs.rate_net).widths),
        "disable_b_branch": bool(model.evolution.disable_b_branch),
    }
    return s


def build_model_from_structure(s):
    from .model import init_model

    model = init_model(s["d_x"], s["d_z"], s["alpha"], obs_model=s["obs_model"],
                       rec_widths=tuple(s["rec_widths"]),
                       b_widths=tuple(s["b_widths"]),
                       obs_widths=tuple(s["obs_widths"]), seed=0)
    model.evolution.disable_b_branch = bool(s.get("disable_b_branch", False))
    return model


def _load_params_into(model, arrays, prefix="param."):
    names = [n for n, _ in model.parameters()]
    want = {prefix + n for n in names}
    have = {k for k in arrays if k.startswith(prefix)}
    if want != have:
        missing = sorted(want - have)[:3]
        extra = sorted(have - want)[:3]
        raise InvalidDataError(
            f"parameter name mismatch (missing {missing}, unexpected {extra})")
    for n, p in model.parameters():
        a = arrays[prefix + n]
        if a.shape != p.data.shape:
            raise InvalidDataError(f"parameter {n} has shape {a.shape}, "
                                   f"expected {p.data.shape}")
        p.data = a.copy()


def save_model(path, model, extra_meta=None):
    arrays = [("param." + n, p.data) for n, p in model.parameters()]
    meta = {"structure": _model_structure(model)}
    if extra_meta:
        meta["extra"] = extra_meta
    write_bundle(path, arrays, meta, kind="model")


def load_model(path):
    arrays, meta = read_bundle(path, expect_kind="model")
    model = build_model_from_structure(meta["structure"])
    _load_params_into(model, arrays)
    return model


# -- training checkpoint --------------------------------------------------------------


def save_checkpoint(path, state, extra_meta=None):
    model = state.model
    arrays = [("param." + n, p.data) for n, p in model.parameters()]
    names = [n for n, _ in model.parameters()]
    for k, n in enumerate(names):
        arrays.append((f"adam.m.{n}", state.adam.m[k]))
        arrays.append((f"adam.v.{n}", state.adam.v[k]))
    for i, p in enumerate(state.paths):
        arrays.append((f"path.{i}", p))
    cfg = asdict(state.config)
    for key in ("rec_widths", "b_widths", "obs_widths"):
        cfg[key] = list(cfg[key])
    meta = {
        "structure": _model_structure(model),
        "config": cfg,
        "epoch": state.epoch,
        "adam_t": state.adam.t,
        "n_paths": len(state.paths),
        "history": [asdict(r) for r in state.history],
    }
    if extra_meta:
        meta["extra"] = extra_meta
    write_bundle(path, arrays, meta, kind="checkpoint")


def load_checkpoint(path):
    from .training import AdamState, EpochRecord, TrainConfig, TrainState

    arrays, meta = read_bundle(path, expect_kind="checkpoint")
    model = build_model_from_structure(meta["structure"])
    _load_params_into(model, arrays)
    cfg_dict = dict(meta["config"])
    for key in ("rec_widths", "b_widths", "obs_widths"):
        cfg_dict[key] = tuple(cfg_dict[key])
    config = TrainConfig(**cfg_dict)
    names = [n for n, _ in model.parameters()]
    adam = AdamState(m=[arrays[f"adam.m.{n}"].copy() for n in names],
                     v=[arrays[f"adam.v.{n}"].copy() for n in names],
                     t=int(meta["adam_t"]))
    paths = [arrays[f"path.{i}"].copy() for i in range(int(meta["n_paths"]))]
    history = [EpochRecord(**r) for r in meta["history"]]
    return TrainState(config=config, model=model, adam=adam, paths=paths,
                      epoch=int(meta["epoch"]), history=history)
