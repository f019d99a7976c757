"""Joint training: one shared encoder, three losses, one Adam step per batch.

Per iteration the batch goes through the encoder (train mode); the raw
features feed the decoder, the triplet loss and the feature-norm penalty,
while their unit-normalised copies are used only to mine triplets.  The
weighted gradients of all three terms are summed into the encoder before a
single Adam update of every parameter.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses as LS
from .checkpoint import save_checkpoint
from .dataset import DatasetSplit
from .mining import distance_matrix, mine_triplets, normalize_embeddings
from .model import (
    ModelConfig,
    ModelParams,
    decoder_backward,
    decoder_forward,
    init_params,
    siamcoder_backward,
    siamcoder_forward,
)
from .optim import AdamState, adam_step

LOG_FIELDS = ("iteration", "ae", "sm", "fr", "total", "n_triplets")


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 50
    lr: float = 1e-3
    strategy: str = "semi_hard"
    margin: float = 0.5
    weights: LS.LossWeights = field(default_factory=LS.LossWeights)
    embedding_len: int = 512
    seed: int = 0
    channel_scale: float = 1.0
    hinge_mode: str = "per_triplet"
    dtype: str = "float64"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.weights.margin != self.margin:
            # one margin drives both mining and the loss
            self.weights = LS.LossWeights(self.weights.ae, self.weights.sm, self.weights.fr, self.margin)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.embedding_len, 64, self.channel_scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d


@dataclass
class TrainLog:
    rows: list[tuple[int, LS.LossReport]] = field(default_factory=list)
    epoch_ends: list[int] = field(default_factory=list)
    wall_clock: float = 0.0

    def as_table(self) -> list[tuple]:
        return [(it, r.ae, r.sm, r.fr, r.total, r.n_triplets) for it, r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for row in self.as_table():
                w.writerow([row[0], *(repr(float(v)) for v in row[1:5]), row[5]])


def read_log_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"iteration": int(r["iteration"]), "ae": float(r["ae"]), "sm": float(r["sm"]),
         "fr": float(r["fr"]), "total": float(r["total"]), "n_triplets": int(r["n_triplets"])}
        for r in rows
    ]


@dataclass
class StepResult:
    report: LS.LossReport
    grads: dict[str, np.ndarray]
    running: dict[str, np.ndarray]
    triplets: object
    dist: np.ndarray


def loss_and_grads(
    params: ModelParams,
    patches: np.ndarray,
    labels: np.ndarray,
    weights: LS.LossWeights,
    strategy: str = "semi_hard",
    hinge_mode: str = "per_triplet",
    rng: np.random.Generator | int | None = 0,
) -> StepResult:
    """Weighted joint loss on one batch and its gradient for every weight."""
    x = np.asarray(patches, dtype=params.dtype)
    feats, ecache = siamcoder_forward(params, x, "train")
    recon, dcache = decoder_forward(params, feats, "train")

    normed, _ = normalize_embeddings(feats)
    dist = distance_matrix(normed)
    trip = mine_triplets(normed, labels, strategy, weights.margin, rng, dist=dist)
    a, p, n = trip.anchors, trip.positives, trip.negatives

    ae = LS.autoencoder_loss(x, recon)
    sm, ga, gp, gn = LS.siamese_loss_grad(feats[a], feats[p], feats[n], weights.margin, hinge_mode)
    fr = LS.feature_reg_loss(feats)
    report = LS.total_loss(ae, sm, fr, weights, len(trip))

    g_feat = weights.fr * LS.feature_reg_loss_grad(feats)
    if weights.sm and len(trip):
        np.add.at(g_feat, a, weights.sm * ga)
        np.add.at(g_feat, p, weights.sm * gp)
        np.add.at(g_feat, n, weights.sm * gn)
    if weights.ae:
        dec_grads, g_from_dec = decoder_backward(
            params, dcache, weights.ae * LS.autoencoder_loss_grad(x, recon)
        )
        g_feat = g_feat + g_from_dec
    else:
        dec_grads = {k: np.zeros_like(v) for k, v in params.weights.items() if k.startswith("dec")}
    grads = siamcoder_backward(params, ecache, g_feat)
    grads.update(dec_grads)
    running = {**ecache.running, **dcache.running}
    return StepResult(report, grads, running, trip, dist)


def train(
    dataset: DatasetSplit,
    config: TrainConfig,
    *,
    params: ModelParams | None = None,
    checkpoint_path=None,
    log_path=None,
    triplet_dump=None,
    progress=None,
    max_iterations: int | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Train on ``dataset``'s train split; returns ``(params, log)``.

    ``progress(epoch, iteration, report)`` is called after every step.
    ``max_iterations`` stops early (used for overfitting checks).
    """
    x_all = dataset.train_patches
    y_all = np.asarray(dataset.train_labels)
    if len(np.unique(y_all)) < 2:
        raise ValueError("training data needs at least two classes")
    dtype = np.dtype(config.dtype)
    if params is None:
        params = init_params(config.model_config(), config.seed, dtype)
    adam = AdamState(lr=config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    mine_rng = np.random.default_rng([config.seed, 2])
    log = TrainLog()
    dump = None
    if triplet_dump is not None:
        dump = open(triplet_dump, "w", newline="")
        dump_writer = csv.writer(dump)
        dump_writer.writerow(("iteration", "a", "p", "n", "d_ap", "d_an", "score"))

    t0 = time.perf_counter()
    it = 0
    try:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(len(y_all))
            for start in range(0, len(order), config.batch_size):
                idx = np.sort(order[start:start + config.batch_size])
                step = loss_and_grads(
                    params, x_all[idx].astype(dtype), y_all[idx], config.weights,
                    config.strategy, config.hinge_mode, mine_rng,
                )
                adam_step(params.weights, step.grads, adam)
                params.buffers.update(step.running)
                it += 1
                log.rows.append((it, step.report))
                if dump is not None:
                    _dump_triplets(dump_writer, it, step.triplets, step.dist)
                if progress is not None:
                    progress(epoch, it, step.report)
                if max_iterations is not None and it >= max_iterations:
                    break
            log.epoch_ends.append(it)
            if max_iterations is not None and it >= max_iterations:
                break
    finally:
        if dump is not None:
            dump.close()
    log.wall_clock = time.perf_counter() - t0

    if log_path is not None:
        log.write_csv(log_path)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, params, seed=config.seed, loss_weights=config.weights,
                        train_config=config.to_dict(), adam=adam)
    return params, log


def _dump_triplets(writer, it, trip, dist):
    for a, p, n in trip.as_array():
        d_ap, d_an = float(dist[a, p]), float(dist[a, n])
        writer.writerow((it, a, p, n, d_ap, d_an, d_ap - d_an + trip.margin))


def extract_features(params: ModelParams, patches: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode encoder features, (N, EL)."""
    patches = np.asarray(patches)
    out = []
    for start in range(0, len(patches), batch_size):
        f, _ = siamcoder_forward(params, patches[start:start + batch_size].astype(params.dtype), "eval")
        out.append(f)
    if not out:
        return np.zeros((0, params.config.embedding_len), dtype=params.dtype)
    return np.concatenate(out)
