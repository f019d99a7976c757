import json

import numpy as np
import pytest
from PIL import Image

from jtanet import cli
from jtanet.checkpoint import load_checkpoint
from jtanet.dataset import import_patches
from jtanet.trainer import TrainConfig, read_log_csv

FAST = ["--el", "8", "--channel-scale", "1/16", "--batch", "16", "--epochs", "1", "--quiet"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["ingest", "--synth", "--n-per-class", "30", "--n-classes", "4", "--out", str(out)]) == 0
    assert cli.main(["train", "--data", str(out / "patches.jtac"), "--out", str(out), *FAST]) == 0
    return out


def test_parser_defaults_follow_train_config():
    args = cli.build_parser().parse_args(["train", "--data", "x", "--out", "y"])
    cfg = cli._train_config(args)
    d = TrainConfig()
    assert (cfg.batch_size, cfg.epochs, cfg.lr, cfg.margin, cfg.strategy, cfg.embedding_len) == (
        d.batch_size, d.epochs, d.lr, d.margin, d.strategy, d.embedding_len)
    assert (cfg.weights.ae, cfg.weights.sm, cfg.weights.fr) == (1, 1, 1)


def test_parser_options():
    args = cli.build_parser().parse_args(
        ["train", "--data", "x", "--out", "y", "--loss-weights", "1:5:1", "--strategy", "semi_hard",
         "--el", "512", "--channel-scale", "1/8", "--hinge", "batch"])
    cfg = cli._train_config(args)
    assert cfg.weights.sm == 5 and cfg.embedding_len == 512 and cfg.channel_scale == 0.125
    assert cfg.hinge_mode == "batch"


def test_bad_flags_are_usage_errors():
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--data", "x", "--out", "y", "--strategy", "easy"])
    assert e.value.code == 2
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["train", "--data", "x", "--out", "y", "--channel-scale", "0"])


def test_ingest_synth(run_dir):
    ds = import_patches(run_dir / "patches.jtac")
    assert len(ds.train_labels) == 96 and len(ds.test_labels) == 24
    m = json.loads((run_dir / "ingest_manifest.json").read_text())
    assert m["command"] == "ingest" and m["config"]["n_per_class"] == 30


def test_ingest_bad_path(tmp_path, capsys):
    assert cli.main(["ingest", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == cli.EXIT_IO
    assert "no such directory" in capsys.readouterr().err


def test_train_outputs(run_dir):
    rows = read_log_csv(run_dir / "train_log.csv")
    assert [r["iteration"] for r in rows] == list(range(1, 7))
    ck = load_checkpoint(run_dir / "model.ckpt")
    assert ck.params.config.embedding_len == 8
    m = json.loads((run_dir / "train_manifest.json").read_text())
    assert m["inputs"]["data"]["sha256"] and m["seed"] == 0
    assert m["config"]["channel_scale"] == 0.0625


def test_train_reproducible(run_dir, tmp_path):
    assert cli.main(["train", "--data", str(run_dir / "patches.jtac"), "--out", str(tmp_path), *FAST]) == 0
    for name in ("train_log.csv", "model.ckpt"):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


def test_eval_sweep(run_dir, tmp_path, capsys):
    rc = cli.main(["eval", "--data", str(run_dir / "patches.jtac"), "--checkpoint", str(run_dir / "model.ckpt"),
                   "--out", str(tmp_path), "--delta-sweep"])
    assert rc == cli.EXIT_VALIDATION  # 96 database rows < delta 100
    assert "delta must be" in capsys.readouterr().err


def test_eval_single_and_sweep(tmp_path):
    assert cli.main(["ingest", "--synth", "--n-per-class", "45", "--n-classes", "3", "--noise", "0",
                     "--out", str(tmp_path)]) == 0
    assert cli.main(["train", "--data", str(tmp_path / "patches.jtac"), "--out", str(tmp_path),
                     *FAST, "--epochs", "0"]) == 0
    base = ["eval", "--data", str(tmp_path / "patches.jtac"), "--checkpoint", str(tmp_path / "model.ckpt"),
            "--out", str(tmp_path)]
    assert cli.main([*base, "--delta-sweep"]) == 0
    lines = (tmp_path / "precision.csv").read_text().splitlines()
    assert lines[0] == "delta,Pr,class_0,class_1,class_2" and len(lines) == 21
    # noise-free classes: every test patch equals its class prototype, so 100 up to delta = 36
    pr = {int(r.split(",")[0]): float(r.split(",")[1]) for r in lines[1:]}
    assert all(pr[d] == 100.0 for d in range(5, 36, 5))
    svg = (tmp_path / "precision.svg").read_text()
    assert svg.count('class="series"') == 4
    assert cli.main([*base, "--delta", "5"]) == 0
    assert len((tmp_path / "precision.csv").read_text().splitlines()) == 2


def test_query_index_and_image(run_dir, tmp_path, capsys):
    ck = str(run_dir / "model.ckpt")
    data = str(run_dir / "patches.jtac")
    assert cli.main(["query", "--checkpoint", ck, "--data", data, "--index", "3", "--subset", "train",
                     "--delta", "4", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "query.csv").read_text().splitlines()[1:]
    assert rows[0].split(",")[1] == "3" and float(rows[0].split(",")[4]) < 1e-12
    dists = [float(r.split(",")[4]) for r in rows]
    assert dists == sorted(dists)

    img = np.random.default_rng(0).integers(0, 256, (32, 32, 3), dtype=np.uint8)
    Image.fromarray(img).save(tmp_path / "q.png")
    assert cli.main(["query", "--checkpoint", ck, "--data", data, "--image", str(tmp_path / "q.png"),
                     "--out", str(tmp_path)]) == 0
    assert cli.main(["query", "--checkpoint", ck, "--data", data, "--index", "0", "--delta", "97",
                     "--out", str(tmp_path)]) == cli.EXIT_VALIDATION
    Image.fromarray(img[:20]).save(tmp_path / "bad.png")
    assert cli.main(["query", "--checkpoint", ck, "--data", data, "--image", str(tmp_path / "bad.png"),
                     "--out", str(tmp_path)]) == cli.EXIT_VALIDATION


def test_query_with_saved_db(run_dir, tmp_path):
    ck, data = str(run_dir / "model.ckpt"), str(run_dir / "patches.jtac")
    assert cli.main(["eval", "--data", data, "--checkpoint", ck, "--out", str(tmp_path)]) == 0
    assert cli.main(["query", "--checkpoint", ck, "--db", str(tmp_path / "features.jtac"), "--data", data,
                     "--index", "0", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "query_manifest.json").exists()


def test_plot(run_dir, tmp_path):
    assert cli.main(["plot", "--log", str(run_dir / "train_log.csv"), "--out", str(tmp_path)]) == 0
    svg = (tmp_path / "losses.svg").read_text()
    for name in ("AE_Loss", "SE_LOSS", "RE_LOSS", "TOTAL_LOSS"):
        assert f'data-name="{name}"' in svg
    assert ">iteration<" in svg


def test_plot_empty_log(tmp_path, capsys):
    (tmp_path / "log.csv").write_text("iteration,ae,sm,fr,total,n_triplets\n")
    assert cli.main(["plot", "--log", str(tmp_path / "log.csv"), "--out", str(tmp_path)]) == cli.EXIT_VALIDATION
    assert "no rows" in capsys.readouterr().err


def test_missing_checkpoint(run_dir, tmp_path):
    rc = cli.main(["eval", "--data", str(run_dir / "patches.jtac"), "--checkpoint", str(tmp_path / "nope"),
                   "--out", str(tmp_path)])
    assert rc == cli.EXIT_IO


def test_numeric_failure(run_dir, tmp_path, monkeypatch):
    from jtanet.errors import NumericError

    def boom(*a, **k):
        raise NumericError("non-finite gradient")

    monkeypatch.setattr(cli, "train", boom)
    rc = cli.main(["train", "--data", str(run_dir / "patches.jtac"), "--out", str(tmp_path), *FAST])
    assert rc == cli.EXIT_NUMERIC


def test_thread_env(run_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("JTANET_THREADS", "1")
    assert cli.main(["plot", "--log", str(run_dir / "train_log.csv"), "--out", str(tmp_path)]) == 0
