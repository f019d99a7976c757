"""Model checkpoints in the binary container format.

Header metadata: model config, ordered layer manifest, seed, loss weights,
optional training config and Adam hyper-parameters.  Tensors: every weight
(``w.<name>``), every batch-norm buffer (``b.<name>``) and, when present, the
Adam moments (``adam.m.<name>`` / ``adam.v.<name>``).
"""

from __future__ import annotations

from dataclasses import dataclass

from .container import read_container, write_container
from .model import ModelConfig, ModelParams, layer_manifest
from .optim import AdamState


@dataclass
class Checkpoint:
    params: ModelParams
    meta: dict
    adam: AdamState | None = None


def save_checkpoint(path, params: ModelParams, *, seed=None, loss_weights=None,
                    train_config: dict | None = None, adam: AdamState | None = None) -> None:
    meta = {
        "format": "jtanet-checkpoint",
        "config": params.config.to_dict(),
        "layers": [[name, list(shape)] for name, shape in layer_manifest(params.config)],
        "seed": seed,
        "loss_weights": loss_weights.to_dict() if loss_weights is not None else None,
        "train_config": train_config,
        "adam": adam.hyper() if adam is not None else None,
        "fingerprint": params.fingerprint(),
    }
    tensors = {f"w.{k}": v for k, v in params.weights.items()}
    tensors.update({f"b.{k}": v for k, v in params.buffers.items()})
    if adam is not None:
        tensors.update(adam.to_tensors())
    write_container(path, "ckpt", meta, tensors)


def load_checkpoint(path) -> Checkpoint:
    meta, t = read_container(path, kind="ckpt")
    config = ModelConfig.from_dict(meta["config"])
    weights = {name: t[f"w.{name}"] for name, _ in meta["layers"]}
    buffers = {k[2:]: v for k, v in t.items() if k.startswith("b.")}
    params = ModelParams(config, weights, buffers)
    adam = AdamState.from_tensors(meta["adam"], t) if meta.get("adam") else None
    return Checkpoint(params, meta, adam)
