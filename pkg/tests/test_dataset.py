import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from jtanet.dataset import (
    RCC_CLASS_COUNTS,
    RCC_CLASSES,
    crop_window,
    export_patches,
    import_patches,
    ingest_rcc,
    stratified_split,
    synth_dataset,
    to_patch,
)
from jtanet.errors import ContainerError, DatasetError


class TestSynthetic:
    def test_split_sizes(self):
        ds = synth_dataset(100, 4, seed=0)
        assert ds.train_patches.shape == (320, 64, 64, 3)
        assert len(ds.test_labels) == 80
        assert np.bincount(ds.test_labels).tolist() == [20] * 4

    def test_noise_free_classes_are_constant(self):
        ds = synth_dataset(5, 3, noise_sigma=0.0, seed=1)
        x = np.concatenate([ds.train_patches, ds.test_patches])
        y = np.concatenate([ds.train_labels, ds.test_labels])
        for k in range(3):
            block = x[y == k]
            assert np.all(block == block[0])
        assert not np.array_equal(x[y == 0][0], x[y == 1][0])

    def test_seeded(self):
        a, b = synth_dataset(10, 2, seed=3), synth_dataset(10, 2, seed=3)
        assert np.array_equal(a.train_patches, b.train_patches)
        assert not np.array_equal(a.train_patches, synth_dataset(10, 2, seed=4).train_patches)

    def test_range_and_dtype(self):
        ds = synth_dataset(10, 2, noise_sigma=3.0, seed=0)
        assert ds.train_patches.dtype == np.float32
        assert ds.train_patches.min() >= -1 and ds.train_patches.max() <= 1


class TestContainer:
    def test_round_trip(self, tmp_path):
        ds = synth_dataset(6, 3, seed=2)
        export_patches(ds, tmp_path / "p.bin")
        back = import_patches(tmp_path / "p.bin")
        for f in ("train_patches", "train_labels", "test_patches", "test_labels", "train_centers"):
            a, b = getattr(ds, f), getattr(back, f)
            assert a.dtype == b.dtype and np.array_equal(a, b)
        assert back.class_names == ("class0", "class1", "class2")
        assert back.split_seed == 2

    def test_truncated(self, tmp_path):
        export_patches(synth_dataset(4, 2, seed=0), tmp_path / "p.bin")
        data = (tmp_path / "p.bin").read_bytes()
        (tmp_path / "p.bin").write_bytes(data[:-100])
        with pytest.raises(ContainerError):
            import_patches(tmp_path / "p.bin")

    def test_wrong_kind(self, tmp_path):
        from jtanet.checkpoint import save_checkpoint
        from jtanet.model import ModelConfig, init_params

        save_checkpoint(tmp_path / "m.ckpt", init_params(ModelConfig(4, channel_scale=1 / 16)))
        with pytest.raises(ContainerError):
            import_patches(tmp_path / "m.ckpt")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=5, max_size=80), st.data())
def test_stratified_split_proportions(labels, data):
    labels = np.array(labels)
    n_test = data.draw(st.integers(0, len(labels)))
    tr, te = stratified_split(labels, n_test, seed=0)
    assert len(te) == n_test and len(tr) + len(te) == len(labels)
    assert not set(tr) & set(te)
    for c in np.unique(labels):
        expected = (labels == c).sum() * n_test / len(labels)
        assert abs((labels[te] == c).sum() - expected) <= 1


class TestCrop:
    def test_corner_clamped(self):
        assert crop_window(5, 5, 500, 500) == (0, 0)

    def test_centered(self):
        assert crop_window(100, 50, 500, 500) == (34, 84)

    def test_far_edge(self):
        assert crop_window(499, 499, 500, 500) == (468, 468)

    def test_out_of_bounds(self):
        with pytest.raises(DatasetError):
            crop_window(600, 10, 500, 500)

    def test_to_patch_range(self):
        crop = np.zeros((32, 32, 3), np.uint8)
        crop[..., 1] = 255
        p = to_patch(crop)
        assert p.shape == (64, 64, 3) and p.dtype == np.float32
        assert np.all(p[..., 0] == -1) and np.all(p[..., 1] == 1)


def _fake_rcc(root, n_images=2, per_image=6):
    rng = np.random.default_rng(0)
    for i in range(n_images):
        img = rng.integers(0, 256, (80, 90, 3), dtype=np.uint8)
        Image.fromarray(img).save(root / f"img{i}.png")
        rows = ["x,y,label"] + [f"{5 + 7 * j},{5 + 9 * j},{RCC_CLASSES[j % 4]}" for j in range(per_image)]
        (root / f"img{i}.csv").write_text("\n".join(rows) + "\n")


class TestIngest:
    def test_small_directory(self, tmp_path):
        _fake_rcc(tmp_path)
        with pytest.warns(UserWarning, match="census"):
            ds = ingest_rcc(tmp_path, split_seed=0, n_test=4)
        assert len(ds.train_labels) == 8 and len(ds.test_labels) == 4
        assert ds.train_patches.shape[1:] == (64, 64, 3)
        assert ds.train_patches.min() >= -1 and ds.train_patches.max() <= 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            again = ingest_rcc(tmp_path, split_seed=0, n_test=4)
        assert np.array_equal(ds.train_patches, again.train_patches)

    def test_patch_content(self, tmp_path):
        _fake_rcc(tmp_path, n_images=1, per_image=1)
        img = np.asarray(Image.open(tmp_path / "img0.png"))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ds = ingest_rcc(tmp_path, n_test=0)
        # annotation at (5, 5) clamps to the top-left window
        np.testing.assert_array_equal(ds.train_patches[0], to_patch(img[:32, :32]))
        assert ds.record("train", 0).center == (5, 5)

    def test_missing_annotation(self, tmp_path):
        _fake_rcc(tmp_path)
        (tmp_path / "img1.csv").unlink()
        with pytest.raises(DatasetError, match="missing annotation"):
            ingest_rcc(tmp_path)

    def test_point_outside(self, tmp_path):
        _fake_rcc(tmp_path, n_images=1)
        (tmp_path / "img0.csv").write_text("x,y,label\n300,10,0\n")
        with pytest.raises(DatasetError, match="outside"):
            ingest_rcc(tmp_path)

    def test_bad_root(self, tmp_path):
        with pytest.raises(DatasetError):
            ingest_rcc(tmp_path / "nope")

    def test_reference_counts(self):
        assert sum(RCC_CLASS_COUNTS) == 22444
