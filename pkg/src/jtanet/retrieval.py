"""Feature database, exhaustive Euclidean retrieval and mean precision@delta."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .errors import ShapeError
from .model import ModelParams
from .trainer import extract_features

SWEEP_DELTAS = tuple(range(5, 101, 5))
# caps the (queries x N x dim) temporary built per distance block
_BLOCK_ELEMS = 1 << 23


@dataclass
class FeatureDatabase:
    features: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    embedding_len: int
    fingerprint: str = ""

    def __post_init__(self):
        n = len(self.features)
        if len(self.labels) != n or len(self.ids) != n:
            raise ShapeError(f"database rows ({n}), labels ({len(self.labels)}) and ids ({len(self.ids)}) differ")

    def __len__(self) -> int:
        return len(self.features)

    def save(self, path) -> None:
        meta = {"format": "jtanet-featdb", "embedding_len": self.embedding_len, "fingerprint": self.fingerprint}
        write_container(path, "featdb", meta, {"features": self.features, "labels": self.labels, "ids": self.ids})

    @classmethod
    def load(cls, path) -> "FeatureDatabase":
        meta, t = read_container(path, kind="featdb")
        return cls(t["features"], t["labels"], t["ids"], int(meta["embedding_len"]), meta["fingerprint"])


@dataclass
class RetrievalResult:
    query_id: int
    indices: np.ndarray
    distances: np.ndarray
    query_label: int | None = None


def build_index(params: ModelParams, train_patches, labels=None, ids=None) -> FeatureDatabase:
    feats = extract_features(params, train_patches)
    n = len(feats)
    labels = np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    return FeatureDatabase(feats, labels, ids, params.config.embedding_len, params.fingerprint())


def euclidean_distances(db_feats: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """(Q, N) Euclidean distances, computed from explicit differences."""
    q = np.atleast_2d(queries)
    if q.shape[1] != db_feats.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != database dim {db_feats.shape[1]}")
    out = np.empty((len(q), len(db_feats)), dtype=np.result_type(q, db_feats))
    step = max(1, _BLOCK_ELEMS // max(1, db_feats.size))
    for s in range(0, len(q), step):
        diff = q[s:s + step, None, :] - db_feats[None, :, :]
        out[s:s + step] = np.sqrt((diff * diff).sum(axis=2))
    return out


def rank(distances: np.ndarray, delta: int) -> np.ndarray:
    """First ``delta`` indices by increasing distance, ties to the lower index."""
    return np.argsort(distances, kind="stable", axis=-1)[..., :delta]


def _check_delta(delta: int, n: int) -> None:
    if not 1 <= delta <= n:
        raise ValueError(f"delta must be in [1, {n}], got {delta}")


def query(db: FeatureDatabase, feature: np.ndarray, delta: int, query_id: int = -1,
          query_label: int | None = None) -> RetrievalResult:
    _check_delta(delta, len(db))
    d = euclidean_distances(db.features, np.asarray(feature).reshape(1, -1))[0]
    idx = rank(d, delta)
    return RetrievalResult(query_id, idx, d[idx], query_label)


def precision_from_features(db: FeatureDatabase, query_feats: np.ndarray, query_labels, delta: int):
    """Returns ``(Pr, per-query Pr_j)`` in percent."""
    _check_delta(delta, len(db))
    query_labels = np.asarray(query_labels)
    d = euclidean_distances(db.features, query_feats)
    hits = db.labels[rank(d, delta)] == query_labels[:, None]
    per_query = 100.0 * hits.sum(axis=1) / delta
    return float(per_query.mean()), per_query


def mean_precision(db: FeatureDatabase, test_patches, test_labels, params: ModelParams, delta: int):
    feats = extract_features(params, test_patches)
    return precision_from_features(db, feats, test_labels, delta)


def precision_curve(db: FeatureDatabase, query_feats, query_labels, deltas=SWEEP_DELTAS,
                    n_classes: int | None = None) -> list[dict]:
    """One row per delta: ``{"delta", "Pr", "class_<k>": ...}`` with per-class means."""
    query_labels = np.asarray(query_labels)
    if n_classes is None:
        n_classes = int(max(query_labels.max(initial=-1), db.labels.max(initial=-1))) + 1
    _check_delta(max(deltas), len(db))
    d = euclidean_distances(db.features, query_feats)
    order = rank(d, max(deltas))
    hits = db.labels[order] == query_labels[:, None]
    rows = []
    for delta in deltas:
        per_query = 100.0 * hits[:, :delta].sum(axis=1) / delta
        row = {"delta": delta, "Pr": float(per_query.mean())}
        for k in range(n_classes):
            sel = query_labels == k
            row[f"class_{k}"] = float(per_query[sel].mean()) if sel.any() else float("nan")
        rows.append(row)
    return rows


def write_precision_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
