import numpy as np
import pytest

from semco.data import (
    SYNTHETIC_CLASSES,
    Dataset,
    load_dataset,
    make_splits,
    make_synthetic,
    read_cifar_binary,
    write_cifar_binary,
    write_npz,
)
from semco.errors import DataError


def toy(n_per_class=5, K=4, shape=(4, 4, 3), seed=0):
    r = np.random.default_rng(seed)
    labels = np.repeat(np.arange(K), n_per_class)
    return Dataset(r.uniform(size=(len(labels), *shape)), labels, [f"c{k}" for k in range(K)])


class TestSplits:
    def test_stratified(self):
        lab, unl, _ = make_splits(toy(10), 8, seed=1)
        assert np.bincount(lab.labels).tolist() == [2, 2, 2, 2]
        assert len(unl) == 32
        assert not set(lab.ids) & set(unl.ids)

    def test_all_labeled(self):
        lab, unl, _ = make_splits(toy(3), 12, seed=0)
        assert len(lab) == 12 and len(unl) == 0

    def test_deterministic(self):
        a = make_splits(toy(10), 8, seed=4)[0].ids
        b = make_splits(toy(10), 8, seed=4)[0].ids
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, make_splits(toy(10), 8, seed=5)[0].ids)

    def test_cifar10_sized_split(self):
        lab, _, _ = make_splits(toy(30, K=10, shape=(2, 2, 3)), 250, seed=0)
        assert np.bincount(lab.labels).tolist() == [25] * 10

    def test_class_too_small(self):
        ds = toy(3)
        ds = ds.subset(np.flatnonzero(ds.labels != 0).tolist() + [0])
        with pytest.raises(DataError, match="c0"):
            make_splits(ds, 8, seed=0)

    def test_not_divisible(self):
        with pytest.raises(DataError):
            make_splits(toy(5), 6, seed=0)


class TestLoaders:
    def test_cifar10_binary_roundtrip(self, tmp_path):
        r = np.random.default_rng(0)
        ds = Dataset(np.round(r.uniform(size=(5, 32, 32, 3)) * 255) / 255, [0, 3, 9, 1, 1],
                     [str(i) for i in range(10)])
        write_cifar_binary(ds, tmp_path / "b.bin")
        back = read_cifar_binary(tmp_path / "b.bin")
        np.testing.assert_allclose(back.images, ds.images, atol=1e-6)
        assert back.labels.tolist() == [0, 3, 9, 1, 1] and back.class_names[0] == "airplane"

    def test_cifar100_uses_fine_label(self, tmp_path):
        ds = Dataset(np.zeros((2, 32, 32, 3)), [42, 7], [str(i) for i in range(100)])
        write_cifar_binary(ds, tmp_path / "b.bin", label_bytes=2)
        assert read_cifar_binary(tmp_path / "b.bin").labels.tolist() == [42, 7]

    def test_truncated_binary(self, tmp_path):
        (tmp_path / "b.bin").write_bytes(b"\x00" * 100)
        with pytest.raises(DataError, match="CIFAR"):
            read_cifar_binary(tmp_path / "b.bin")

    def test_directory_of_arrays_and_png(self, tmp_path):
        from PIL import Image

        for c in ("cat", "dog"):
            (tmp_path / c).mkdir()
        np.save(tmp_path / "cat" / "a.npy", np.full((4, 4, 3), 0.5, dtype=np.float32))
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "dog" / "b.png")
        ds = load_dataset(tmp_path)
        assert ds.class_names == ["cat", "dog"] and ds.labels.tolist() == [0, 1]

    def test_npz(self, tmp_path):
        ds = toy()
        write_npz(ds, tmp_path / "d.npz")
        back = load_dataset(tmp_path / "d.npz")
        assert back.class_names == ds.class_names
        np.testing.assert_allclose(back.images, ds.images, rtol=1e-6)


class TestSynthetic:
    def test_shape_and_balance(self):
        ds = make_synthetic(10, seed=0)
        assert ds.images.shape == (80, 16, 16, 3)
        assert np.bincount(ds.labels).tolist() == [10] * 8
        assert ds.class_names == SYNTHETIC_CLASSES
        assert ds.images.min() >= 0 and ds.images.max() <= 1

    def test_deterministic(self):
        np.testing.assert_array_equal(make_synthetic(3, seed=2).images, make_synthetic(3, seed=2).images)

    def test_pairs_closer_than_non_pairs(self):
        ds = make_synthetic(200, seed=0, noise=0.0)
        # pair members share a grating; compare shift-invariant magnitude spectra
        spectra = np.abs(np.fft.fft2(ds.images - ds.images.mean(axis=(1, 2), keepdims=True), axes=(1, 2)))
        means = np.stack([spectra[ds.labels == c].mean(0).ravel() for c in range(8)])
        d = np.linalg.norm(means[:, None] - means[None], axis=-1)
        for c in range(0, 8, 2):
            others = [d[c, j] for j in range(8) if j not in (c, c + 1)]
            assert d[c, c + 1] < min(others)
