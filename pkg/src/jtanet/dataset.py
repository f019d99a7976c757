"""Labelled 64x64 patch sets: RCC nuclei ingestion and a synthetic generator.

RCC input layout (one sidecar CSV per image, same stem)::

    root/
      img1.bmp     img1.csv
      img2.bmp     img2.csv
      ...

Each CSV has a header ``x,y,label``; ``x`` is the column and ``y`` the row of
the nucleus centre in 0-based pixel coordinates, ``label`` is a class name
(``epithelial``, ``fibroblast``, ``inflammatory``, ``others``) or its index
0-3.  A 32x32 window centred on the nucleus is cropped (shifted inwards at
image borders), upsampled 2x bilinearly to 64x64 and mapped from [0, 255] to
[-1, 1].
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import DatasetError
from .layers import upsample_bilinear_2x

RCC_CLASSES = ("epithelial", "fibroblast", "inflammatory", "others")
RCC_CLASS_COUNTS = (7722, 5712, 6971, 2039)
RCC_TOTAL = 22444
RCC_TEST = 2000
CROP = 32
PATCH = 64
IMAGE_SUFFIXES = (".bmp", ".png")
# how far (in pixels) a centre may sit outside the image before it is an error
CLAMP_TOLERANCE = 1.0


@dataclass
class PatchRecord:
    patch: np.ndarray
    label: int
    source: int
    center: tuple[int, int]


@dataclass
class DatasetSplit:
    """Train/test patch arrays, (N, 64, 64, 3) float32 in [-1, 1]."""

    train_patches: np.ndarray
    train_labels: np.ndarray
    test_patches: np.ndarray
    test_labels: np.ndarray
    class_names: tuple[str, ...]
    split_seed: int
    train_sources: np.ndarray = field(default=None)
    test_sources: np.ndarray = field(default=None)
    train_centers: np.ndarray = field(default=None)
    test_centers: np.ndarray = field(default=None)

    def __post_init__(self):
        for subset in ("train", "test"):
            n = len(getattr(self, f"{subset}_labels"))
            if getattr(self, f"{subset}_sources") is None:
                setattr(self, f"{subset}_sources", np.full(n, -1, dtype=np.int64))
            if getattr(self, f"{subset}_centers") is None:
                setattr(self, f"{subset}_centers", np.full((n, 2), -1, dtype=np.int64))
        self.class_names = tuple(self.class_names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def record(self, subset: str, i: int) -> PatchRecord:
        return PatchRecord(
            getattr(self, f"{subset}_patches")[i],
            int(getattr(self, f"{subset}_labels")[i]),
            int(getattr(self, f"{subset}_sources")[i]),
            tuple(int(c) for c in getattr(self, f"{subset}_centers")[i]),
        )

    def census(self) -> dict[str, int]:
        labels = np.concatenate([self.train_labels, self.test_labels])
        return {name: int((labels == k).sum()) for k, name in enumerate(self.class_names)}


def stratified_split(labels: np.ndarray, n_test: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices (train, test), both sorted, with class proportions kept to +-1."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    counts = np.array([(labels == c).sum() for c in classes])
    quota = counts * n_test / len(labels)
    take = np.floor(quota).astype(int)
    # largest remainder so that the test size is exactly n_test
    for k in np.argsort(-(quota - take), kind="stable")[: n_test - take.sum()]:
        take[k] += 1
    test = []
    for c, k in zip(classes, take):
        idx = np.flatnonzero(labels == c)
        test.append(rng.permutation(idx)[:k])
    test = np.sort(np.concatenate(test)) if test else np.zeros(0, dtype=np.int64)
    train = np.setdiff1d(np.arange(len(labels)), test)
    return train, test


# ---------------------------------------------------------------------------
# RCC ingestion


def _parse_label(raw: str, where: str) -> int:
    raw = raw.strip()
    if raw.isdigit():
        k = int(raw)
        if 0 <= k < len(RCC_CLASSES):
            return k
    elif raw.lower() in RCC_CLASSES:
        return RCC_CLASSES.index(raw.lower())
    raise DatasetError(f"{where}: unknown label {raw!r}")


def read_annotations(path: Path) -> list[tuple[float, float, int]]:
    if not path.is_file():
        raise DatasetError(f"missing annotation file {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y", "label"} <= set(reader.fieldnames):
            raise DatasetError(f"{path}: header must contain x,y,label")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            try:
                x, y = float(row["x"]), float(row["y"])
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{where}: bad coordinate") from exc
            rows.append((x, y, _parse_label(row["label"], where)))
    return rows


def crop_window(cx: float, cy: float, height: int, width: int, size: int = CROP) -> tuple[int, int]:
    """Top-left (row, col) of a ``size`` window centred on (cx, cy), kept inside the image."""
    if not (-CLAMP_TOLERANCE <= cx <= width - 1 + CLAMP_TOLERANCE
            and -CLAMP_TOLERANCE <= cy <= height - 1 + CLAMP_TOLERANCE):
        raise DatasetError(f"nucleus centre ({cx}, {cy}) lies outside the {width}x{height} image")
    if height < size or width < size:
        raise DatasetError(f"image {width}x{height} is smaller than the {size}x{size} crop")
    top = int(round(cy)) - size // 2
    left = int(round(cx)) - size // 2
    top = min(max(top, 0), height - size)
    left = min(max(left, 0), width - size)
    return top, left


def to_patch(crop_u8: np.ndarray) -> np.ndarray:
    """(32, 32, 3) uint8 crop -> (64, 64, 3) float32 in [-1, 1]."""
    x = crop_u8.astype(np.float64).transpose(2, 0, 1)
    up = upsample_bilinear_2x(x).transpose(1, 2, 0)
    return (up / 127.5 - 1.0).astype(np.float32)


def _load_rgb(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def ingest_rcc(root, split_seed: int = 0, n_test: int | None = None) -> DatasetSplit:
    """Build a stratified train/test split from an RCC-style directory.

    ``n_test`` defaults to the reference proportion (2,000 of 22,444).
    A class census that differs from the reference counts only warns.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"no such directory: {root}")
    images = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise DatasetError(f"no .bmp/.png images under {root}")
    patches, labels, sources, centers = [], [], [], []
    for src, img_path in enumerate(images):
        ann = read_annotations(img_path.with_suffix(".csv"))
        img = _load_rgb(img_path)
        h, w = img.shape[:2]
        for x, y, label in ann:
            try:
                top, left = crop_window(x, y, h, w)
            except DatasetError as exc:
                raise DatasetError(f"{img_path.name}: {exc}") from None
            patches.append(to_patch(img[top:top + CROP, left:left + CROP]))
            labels.append(label)
            sources.append(src)
            centers.append((int(round(x)), int(round(y))))
    labels = np.array(labels, dtype=np.int64)
    patches = np.stack(patches) if patches else np.zeros((0, PATCH, PATCH, 3), np.float32)
    sources = np.array(sources, dtype=np.int64)
    centers = np.array(centers, dtype=np.int64).reshape(-1, 2)

    counts = tuple(int((labels == k).sum()) for k in range(len(RCC_CLASSES)))
    if counts != RCC_CLASS_COUNTS:
        warnings.warn(
            f"class census {dict(zip(RCC_CLASSES, counts))} differs from the reference "
            f"{dict(zip(RCC_CLASSES, RCC_CLASS_COUNTS))}",
            stacklevel=2,
        )
    if n_test is None:
        n_test = int(round(len(labels) * RCC_TEST / RCC_TOTAL))
    tr, te = stratified_split(labels, n_test, split_seed)
    return DatasetSplit(
        patches[tr], labels[tr], patches[te], labels[te], RCC_CLASSES, split_seed,
        sources[tr], sources[te], centers[tr], centers[te],
    )


# ---------------------------------------------------------------------------
# synthetic patches


def class_prototypes(n_classes: int, seed: int, contrast: float = 0.35) -> np.ndarray:
    """One (64, 64, 3) prototype per class: a tinted, oriented stripe texture."""
    rng = np.random.default_rng([seed, 7919])
    yy, xx = np.mgrid[0:PATCH, 0:PATCH] / PATCH
    protos = np.empty((n_classes, PATCH, PATCH, 3))
    for k in range(n_classes):
        angle = np.pi * k / n_classes + rng.uniform(0, np.pi / (2 * n_classes))
        freq = rng.uniform(2.0, 5.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        tint = rng.uniform(-0.3, 0.3, size=3)
        protos[k] = tint + contrast * wave[..., None] * rng.uniform(0.5, 1.0, size=3)
    return np.clip(protos, -1.0, 1.0)


def synth_dataset(
    n_per_class: int = 100,
    n_classes: int = 4,
    noise_sigma: float = 0.5,
    seed: int = 0,
    test_fraction: float = 0.2,
) -> DatasetSplit:
    """Class prototypes plus iid Gaussian pixel noise, clipped to [-1, 1]."""
    if n_classes < 1 or n_per_class < 1:
        raise ValueError("n_classes and n_per_class must be positive")
    protos = class_prototypes(n_classes, seed)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    noise = rng.standard_normal((len(labels), PATCH, PATCH, 3)) * noise_sigma
    patches = np.clip(protos[labels] + noise, -1.0, 1.0).astype(np.float32)
    n_test = int(round(len(labels) * test_fraction))
    tr, te = stratified_split(labels, n_test, seed)
    names = tuple(f"class{k}" for k in range(n_classes))
    return DatasetSplit(patches[tr], labels[tr], patches[te], labels[te], names, seed)


# ---------------------------------------------------------------------------
# binary patch container

_SUBSET_FIELDS = ("patches", "labels", "sources", "centers")


def export_patches(split: DatasetSplit, path) -> None:
    meta = {
        "format": "jtanet-patches",
        "m": int(split.train_patches.shape[1]) if split.train_patches.ndim == 4 else PATCH,
        "class_names": list(split.class_names),
        "split_seed": int(split.split_seed),
        "n_train": int(len(split.train_labels)),
        "n_test": int(len(split.test_labels)),
    }
    tensors = {}
    for subset in ("train", "test"):
        for f in _SUBSET_FIELDS:
            tensors[f"{subset}_{f}"] = getattr(split, f"{subset}_{f}")
    write_container(path, "patches", meta, tensors)


def import_patches(path) -> DatasetSplit:
    meta, t = read_container(path, kind="patches")
    kw = {f"{s}_{f}": t[f"{s}_{f}"] for s in ("train", "test") for f in _SUBSET_FIELDS}
    return DatasetSplit(class_names=tuple(meta["class_names"]), split_seed=meta["split_seed"], **kw)
