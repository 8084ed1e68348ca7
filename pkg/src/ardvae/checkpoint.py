"""Self-describing checkpoints: a JSON manifest plus one float64 parameter blob.

A checkpoint is a directory holding ``manifest.json`` and ``params.bin``.
The blob is a flat container (version 2, float64 payload) with a single row;
the manifest lists named sections as ``{"name", "offset", "shape"}`` where
``offset`` counts values, not bytes, from the start of the payload.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .data import VERSION_F64, read_flat, write_flat
from .models import ModelState, build_model
from .numerics import RngStream
from .optim import RmsPropState, TrainLoopState

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"


class CheckpointVersionError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    state: ModelState
    opt: RmsPropState
    loop: TrainLoopState
    data_dim: int
    standardizer: dict | None = None
    format_version: int = FORMAT_VERSION

    @property
    def iteration(self) -> int:
        return self.loop.iteration

    def rng(self) -> RngStream:
        return RngStream(self.config.seed)


def save_checkpoint(path, config: TrainConfig, state: ModelState, opt: RmsPropState, loop: TrainLoopState,
                    standardizer: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blocks = [(f"model.{k}", v) for k, v in state.arrays().items()]
    blocks += [(f"opt.ms.{k}", v) for k, v in opt.ms.items()]
    blocks += [(f"opt.mom.{k}", v) for k, v in opt.mom.items()]
    sections, offset = [], 0
    for name, arr in blocks:
        sections.append({"name": name, "offset": offset, "shape": list(arr.shape)})
        offset += arr.size
    flat = np.concatenate([a.reshape(-1) for _, a in blocks]) if blocks else np.zeros(0)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "iteration": loop.iteration,
        "rejected_steps": loop.rejected_steps,
        "test_scores": [float(s) for s in loop.test_scores],
        "data_dim": state.data_dim,
        "latent_dim": state.latent_dim,
        "encoder_hidden": [l.n_out for l in state.encoder.hidden],
        "decoder_hidden": [l.n_out for l in state.decoder.hidden],
        "optimizer": {"learning_rate": opt.learning_rate, "rho": opt.rho, "momentum": opt.momentum,
                      "epsilon": opt.epsilon},
        "init": {"weights": "normal(0, 1/fan_in)", "biases": 0.0},
        "rng": {"seed": config.seed, "streams": ["init", "shuffle/epoch<e>", "noise/<t>", "eval/<t>"]},
        "standardizer": standardizer,
        "blob": BLOB,
        "sections": sections,
    }
    tmp = path / (BLOB + ".tmp")
    write_flat(tmp, flat[None, :], version=VERSION_F64)
    tmp.replace(path / BLOB)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    mpath = path / MANIFEST
    if not mpath.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has format version {version}, this build reads version {FORMAT_VERSION}")
    config = TrainConfig.from_dict(manifest["config"])
    flat = read_flat(path / manifest["blob"])[0]
    blocks = {}
    for sec in manifest["sections"]:
        n = int(np.prod(sec["shape"], dtype=np.int64)) if sec["shape"] else 1
        blocks[sec["name"]] = flat[sec["offset"]: sec["offset"] + n].reshape(sec["shape"])

    state = build_model(config.variant, manifest["data_dim"], manifest["latent_dim"], manifest["encoder_hidden"],
                        RngStream(0), likelihood=config.likelihood, shared_log_var=config.shared_log_var,
                        decoder_hidden_sizes=manifest["decoder_hidden"])
    for name, arr in state.arrays().items():
        src = blocks.get(f"model.{name}")
        if src is None or src.shape != arr.shape:
            raise ValueError(f"checkpoint {path}: section model.{name} missing or mis-shaped")
        arr[...] = src
    hyper = manifest["optimizer"]
    opt = RmsPropState(hyper["learning_rate"], hyper["rho"], hyper["momentum"], hyper["epsilon"])
    for key in list(blocks):
        if key.startswith("opt.ms."):
            opt.ms[key[len("opt.ms."):]] = blocks[key].copy()
        elif key.startswith("opt.mom."):
            opt.mom[key[len("opt.mom."):]] = blocks[key].copy()
    loop = TrainLoopState(manifest["iteration"], manifest["rejected_steps"], list(manifest["test_scores"]))
    return Checkpoint(config, state, opt, loop, manifest["data_dim"], manifest.get("standardizer"), version)
