"""``jtanet`` command line: ingest, train, eval, query, plot.

Every command writes ``<out>/<command>_manifest.json`` describing its
configuration, input file hashes, outputs and wall-clock time.

Exit codes: 0 ok, 2 usage, 3 input/output, 4 validation, 5 numeric.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings
from contextlib import nullcontext
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .dataset import PATCH, export_patches, import_patches, ingest_rcc, synth_dataset, to_patch
from .errors import ContainerError, DatasetError, NumericError
from .losses import HINGE_MODES, LossWeights
from .mining import STRATEGIES
from .retrieval import (
    SWEEP_DELTAS,
    FeatureDatabase,
    build_index,
    precision_curve,
    query,
    write_precision_csv,
)
from .svg import line_chart
from .trainer import TrainConfig, extract_features, read_log_csv, train

EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 3, 4, 5

# legend names of the four loss curves
LOSS_SERIES = (("AE_Loss", "ae"), ("SE_LOSS", "sm"), ("RE_LOSS", "fr"), ("TOTAL_LOSS", "total"))


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, inputs: dict, outputs: dict,
                   seed, wall_clock: float, checkpoint=None) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in inputs.items() if p is not None},
        "checkpoint": str(checkpoint) if checkpoint else None,
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seed": seed,
        "wall_clock": round(wall_clock, 3),
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def parse_scale(text: str) -> float:
    try:
        v = float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad channel scale {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError("channel scale must be positive")
    return v


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    target = out / "patches.jtac"
    if args.synth:
        split = synth_dataset(args.n_per_class, args.n_classes, args.noise, args.seed,
                              test_fraction=args.test_fraction)
        config = {"synth": True, "n_per_class": args.n_per_class, "n_classes": args.n_classes,
                  "noise_sigma": args.noise, "test_fraction": args.test_fraction}
    else:
        if args.data is None:
            raise ValueError("ingest needs --data ROOT or --synth")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            split = ingest_rcc(args.data, split_seed=args.seed)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        config = {"synth": False, "root": str(Path(args.data).resolve())}
    export_patches(split, target)
    census = split.census()
    print(f"wrote {target}: {len(split.train_labels)} train / {len(split.test_labels)} test")
    for name, n in census.items():
        print(f"  {name:14s} {n}")
    config["census"] = census
    write_manifest(out, "ingest", config, {}, {"patches": target}, args.seed, time.perf_counter() - t0)
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch,
        epochs=args.epochs,
        lr=args.lr,
        strategy=args.strategy,
        margin=args.margin,
        weights=LossWeights.parse(args.loss_weights, args.margin),
        embedding_len=args.el,
        seed=args.seed,
        channel_scale=args.channel_scale,
        hinge_mode=args.hinge,
    )


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = _train_config(args)
    if args.data is None:
        raise ValueError("train needs --data PATCHES")
    data = import_patches(args.data)
    out = _out_dir(args)
    ckpt, log_path = out / "model.ckpt", out / "train_log.csv"
    n_batches = -(-len(data.train_labels) // cfg.batch_size)

    def progress(epoch, it, r):
        if not args.quiet:
            print(f"epoch {epoch + 1}/{cfg.epochs} it {it} ({(it - 1) % n_batches + 1}/{n_batches}) "
                  f"ae={r.ae:.5g} sm={r.sm:.5g} fr={r.fr:.5g} total={r.total:.5g} "
                  f"triplets={r.n_triplets}", flush=True)

    outputs = {"checkpoint": ckpt, "log": log_path}
    dump = None
    if args.dump_triplets:
        dump = outputs["triplets"] = out / "triplets.csv"
    _, log = train(data, cfg, checkpoint_path=ckpt, log_path=log_path, triplet_dump=dump, progress=progress)
    print(f"wrote {ckpt} and {log_path} ({len(log.rows)} iterations, {log.wall_clock:.1f}s)")
    write_manifest(out, "train", cfg.to_dict(), {"data": args.data}, outputs, cfg.seed,
                   time.perf_counter() - t0, checkpoint=ckpt)
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    if args.data is None or args.checkpoint is None:
        raise ValueError("eval needs --data PATCHES and --checkpoint MODEL")
    data = import_patches(args.data)
    params = load_checkpoint(args.checkpoint).params
    out = _out_dir(args)
    db = build_index(params, data.train_patches, data.train_labels)
    db_path = out / "features.jtac"
    db.save(db_path)
    qf = extract_features(params, data.test_patches)
    deltas = SWEEP_DELTAS if args.delta_sweep else (args.delta,)
    rows = precision_curve(db, qf, data.test_labels, deltas, n_classes=data.n_classes)
    csv_path = out / "precision.csv"
    write_precision_csv(rows, csv_path)
    outputs = {"features": db_path, "precision": csv_path}
    for r in rows:
        print(f"delta={r['delta']:3d}  Pr={r['Pr']:.2f}")
    if args.delta_sweep:
        svg_path = out / "precision.svg"
        xs = [r["delta"] for r in rows]
        series = {"mean": (xs, [r["Pr"] for r in rows])}
        for k, name in enumerate(data.class_names):
            series[name] = (xs, [r[f"class_{k}"] for r in rows])
        line_chart(series, svg_path, title="Mean precision vs. retrieved images",
                   xlabel="number of retrieved images", ylabel="precision (%)")
        outputs["curve"] = svg_path
    write_manifest(out, "eval", {"deltas": list(deltas)},
                   {"data": args.data, "checkpoint": args.checkpoint}, outputs, None,
                   time.perf_counter() - t0, checkpoint=args.checkpoint)
    return 0


def _image_patch(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise ContainerError(f"cannot read image {path}: {exc}") from exc
    if arr.shape[:2] == (PATCH // 2, PATCH // 2):
        return to_patch(arr)
    if arr.shape[:2] == (PATCH, PATCH):
        return (arr.astype(np.float64) / 127.5 - 1.0).astype(np.float32)
    raise ValueError(f"query image must be 32x32 or 64x64, got {arr.shape[1]}x{arr.shape[0]}")


def cmd_query(args) -> int:
    t0 = time.perf_counter()
    if args.checkpoint is None:
        raise ValueError("query needs --checkpoint MODEL")
    params = load_checkpoint(args.checkpoint).params
    data = import_patches(args.data) if args.data else None
    if args.db:
        db = FeatureDatabase.load(args.db)
        if db.fingerprint and db.fingerprint != params.fingerprint():
            raise ValueError("feature database was built with a different checkpoint")
    elif data is not None:
        db = build_index(params, data.train_patches, data.train_labels)
    else:
        raise ValueError("query needs --db FEATURES or --data PATCHES")

    label = None
    if args.image:
        patch = _image_patch(args.image)[None]
        qid = -1
    elif args.index is not None:
        if data is None:
            raise ValueError("--index needs --data PATCHES")
        pool = data.test_patches if args.subset == "test" else data.train_patches
        labels = data.test_labels if args.subset == "test" else data.train_labels
        if not 0 <= args.index < len(pool):
            raise ValueError(f"--index {args.index} outside [0, {len(pool)})")
        patch, label, qid = pool[args.index:args.index + 1], int(labels[args.index]), args.index
    else:
        raise ValueError("query needs --image PNG or --index I")
    feat = extract_features(params, patch)[0]
    res = query(db, feat, args.delta, qid, label)
    out = _out_dir(args)
    path = out / "query.csv"
    lines = ["rank,db_index,id,label,distance"]
    for rank, (i, d) in enumerate(zip(res.indices, res.distances), start=1):
        lines.append(f"{rank},{i},{db.ids[i]},{db.labels[i]},{float(d)!r}")
    path.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if label is not None:
        hits = int((db.labels[res.indices] == label).sum())
        print(f"query label {label}: {hits}/{args.delta} retrieved share it")
    inputs = {"checkpoint": args.checkpoint, "db": args.db, "data": args.data, "image": args.image}
    write_manifest(out, "query", {"delta": args.delta, "index": args.index, "subset": args.subset},
                   inputs, {"result": path}, None, time.perf_counter() - t0, checkpoint=args.checkpoint)
    return 0


def cmd_plot(args) -> int:
    t0 = time.perf_counter()
    rows = read_log_csv(args.log)
    if not rows:
        raise ValueError(f"{args.log}: training log has no rows")
    out = _out_dir(args)
    its = [r["iteration"] for r in rows]
    series = {name: (its, [r[key] for r in rows]) for name, key in LOSS_SERIES}
    path = out / "losses.svg"
    line_chart(series, path, title="Training losses", xlabel="iteration", ylabel="loss", log_y=args.log_y)
    print(f"wrote {path}")
    write_manifest(out, "plot", {"log_y": args.log_y}, {"log": args.log}, {"plot": path}, None,
                   time.perf_counter() - t0)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jtanet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data_help):
        sp.add_argument("--data", help=data_help)
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("ingest", help="build a patch container")
    common(sp, "RCC root: images (*.bmp/*.png) with sibling x,y,label CSVs")
    sp.add_argument("--synth", action="store_true", help="generate synthetic textures instead")
    sp.add_argument("--n-per-class", type=int, default=100)
    sp.add_argument("--n-classes", type=int, default=4)
    sp.add_argument("--noise", type=float, default=0.5)
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train", help="joint training")
    common(sp, "patch container from `ingest`")
    d = TrainConfig()
    sp.add_argument("--el", type=int, default=d.embedding_len)
    sp.add_argument("--strategy", choices=STRATEGIES, default=d.strategy)
    sp.add_argument("--margin", type=float, default=d.margin)
    sp.add_argument("--loss-weights", default="1:1:1", metavar="AE:SM:FR")
    sp.add_argument("--hinge", choices=HINGE_MODES, default=d.hinge_mode)
    sp.add_argument("--batch", type=int, default=d.batch_size)
    sp.add_argument("--epochs", type=int, default=d.epochs)
    sp.add_argument("--lr", type=float, default=d.lr)
    sp.add_argument("--seed", type=int, default=d.seed)
    sp.add_argument("--channel-scale", type=parse_scale, default=d.channel_scale,
                    help="width multiplier, e.g. 1/8")
    sp.add_argument("--dump-triplets", action="store_true", help="write every mined triplet to triplets.csv")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="precision@delta of the test split against the train split")
    common(sp, "patch container")
    sp.add_argument("--checkpoint", required=True)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--delta", type=int, default=5)
    g.add_argument("--delta-sweep", action="store_true", help="delta = 5, 10, ..., 100")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("query", help="retrieve the delta nearest database patches")
    common(sp, "patch container (database from its train split, and --index source)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--db", help="feature database written by `eval`")
    sp.add_argument("--image", help="32x32 or 64x64 RGB image")
    sp.add_argument("--index", type=int, help="patch index inside --data")
    sp.add_argument("--subset", choices=("test", "train"), default="test")
    sp.add_argument("--delta", type=int, default=5)
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("plot", help="SVG of the four loss curves from a training log")
    sp.add_argument("--log", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log-y", action="store_true")
    sp.set_defaults(func=cmd_plot)
    return p


def _thread_limit():
    n = os.environ.get("JTANET_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (ContainerError, DatasetError, OSError) as exc:
        print(f"jtanet {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"jtanet {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"jtanet {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
