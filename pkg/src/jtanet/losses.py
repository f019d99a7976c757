"""Reconstruction, triplet and feature-norm losses and their weighted sum.

All distances are squared Euclidean; no square roots appear in the losses.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeError

HINGE_MODES = ("per_triplet", "batch")


@dataclass(frozen=True)
class LossWeights:
    ae: float = 1.0
    sm: float = 1.0
    fr: float = 1.0
    margin: float = 0.5

    def __post_init__(self):
        for name in ("ae", "sm", "fr", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")

    @classmethod
    def parse(cls, text: str, margin: float = 0.5) -> "LossWeights":
        """Parse ``"AE:SM:FR"`` (e.g. ``"1:5:1"``)."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"loss weights must look like AE:SM:FR, got {text!r}")
        ae, sm, fr = (float(p) for p in parts)
        return cls(ae, sm, fr, margin)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    ae: float
    sm: float
    fr: float
    total: float
    n_triplets: int


def _per_image_elems(x: np.ndarray) -> int:
    return int(np.prod(x.shape[1:]))


def autoencoder_loss(originals: np.ndarray, reconstructions: np.ndarray) -> float:
    """Sum over the batch of each image's mean squared error."""
    if originals.shape != reconstructions.shape:
        raise ShapeError(f"shape mismatch {originals.shape} vs {reconstructions.shape}")
    diff = reconstructions - originals
    per_image = (diff * diff).reshape(diff.shape[0], -1).mean(axis=1)
    return float(per_image.sum())


def autoencoder_loss_grad(originals: np.ndarray, reconstructions: np.ndarray) -> np.ndarray:
    """d(loss)/d(reconstructions)."""
    if originals.shape != reconstructions.shape:
        raise ShapeError(f"shape mismatch {originals.shape} vs {reconstructions.shape}")
    return 2.0 * (reconstructions - originals) / _per_image_elems(originals)


def _check_triplet_cols(fa, fp, fn):
    if not (fa.shape == fp.shape == fn.shape) or fa.ndim != 2:
        raise ShapeError(f"triplet columns must share an (nb, dim) shape: {fa.shape}, {fp.shape}, {fn.shape}")


def triplet_scores(fa: np.ndarray, fp: np.ndarray, fn: np.ndarray, margin: float) -> np.ndarray:
    """Per-triplet ``|fa - fp|^2 - |fa - fn|^2 + margin`` (before the hinge)."""
    _check_triplet_cols(fa, fp, fn)
    d_ap = ((fa - fp) ** 2).sum(axis=1)
    d_an = ((fa - fn) ** 2).sum(axis=1)
    return d_ap - d_an + margin


def siamese_loss(
    fa: np.ndarray,
    fp: np.ndarray,
    fn: np.ndarray,
    margin: float = 0.5,
    hinge_mode: str = "per_triplet",
) -> float:
    """Triplet hinge loss over ``nb`` mined triplets.

    ``per_triplet`` sums ``max(score_i, 0)``; ``batch`` hinges once on the
    batch-summed distances, ``max(sum d_ap - sum d_an + margin, 0)``.
    An empty triplet set gives 0.
    """
    return siamese_loss_grad(fa, fp, fn, margin, hinge_mode)[0]


def siamese_loss_grad(fa, fp, fn, margin: float = 0.5, hinge_mode: str = "per_triplet"):
    """Returns ``(loss, d/dfa, d/dfp, d/dfn)``; the hinge kink counts as inactive."""
    if hinge_mode not in HINGE_MODES:
        raise ValueError(f"hinge_mode must be one of {HINGE_MODES}, got {hinge_mode!r}")
    _check_triplet_cols(fa, fp, fn)
    zeros = np.zeros_like(fa)
    if fa.shape[0] == 0:
        return 0.0, zeros, zeros.copy(), zeros.copy()
    d_ap = ((fa - fp) ** 2).sum(axis=1)
    d_an = ((fa - fn) ** 2).sum(axis=1)
    if hinge_mode == "per_triplet":
        scores = d_ap - d_an + margin
        active = scores > 0
        loss = float(scores[active].sum())
        w = active.astype(fa.dtype)[:, None]
    else:
        score = d_ap.sum() - d_an.sum() + margin
        loss = float(max(score, 0.0))
        w = np.full((fa.shape[0], 1), 1.0 if score > 0 else 0.0, dtype=fa.dtype)
    g_fp = -2.0 * (fa - fp) * w
    g_fn = 2.0 * (fa - fn) * w
    g_fa = -(g_fp + g_fn)
    return loss, g_fa, g_fp, g_fn


def feature_reg_loss(features: np.ndarray) -> float:
    """Sum of squared L2 norms of the feature rows."""
    return float((features * features).sum())


def feature_reg_loss_grad(features: np.ndarray) -> np.ndarray:
    return 2.0 * features


def total_loss(ae: float, sm: float, fr: float, weights: LossWeights, n_triplets: int = 0) -> LossReport:
    total = weights.ae * ae + weights.sm * sm + weights.fr * fr
    return LossReport(ae=ae, sm=sm, fr=fr, total=total, n_triplets=n_triplets)
