import logging
import math

import numpy as np
import pytest

from xensemble.data import Dataset, DatasetError, load_dataset, make_synthetic_dataset, split, write_dataset
from xensemble.netpbm import NetpbmError, decode, encode, read_image, write_image
from xensemble.pca import _power_deflation, load_pca, pca_fit, pca_transform, save_pca
from xensemble.seeding import subseed, substream


# -- netpbm -----------------------------------------------------------------

def test_decode_p5():
    img = decode(b"P5 2 2 255\n" + bytes([0, 255, 51, 102]))
    assert img.shape == (1, 2, 2)
    np.testing.assert_allclose(img[0], [[0, 1], [0.2, 0.4]])


def test_decode_p6_with_comment():
    img = decode(b"P6\n# made by hand\n1 1\n255\n" + bytes([255, 0, 51]))
    np.testing.assert_allclose(img[:, 0, 0], [1.0, 0.0, 0.2])


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    for c in (1, 3):
        img = rng.integers(0, 256, size=(c, 5, 7)) / 255.0
        write_image(tmp_path / "x.img", img)
        np.testing.assert_array_equal(read_image(tmp_path / "x.img"), img)


def test_netpbm_errors():
    with pytest.raises(NetpbmError, match="truncated.*byte"):
        decode(b"P5 2 2 255\n" + bytes(3))
    with pytest.raises(NetpbmError, match="maxval"):
        decode(b"P5 1 1 65535\n" + bytes(2))
    with pytest.raises(NetpbmError, match="magic"):
        decode(b"P2 1 1 255\n0")
    with pytest.raises(NetpbmError, match="malformed"):
        decode(b"P5 1")
    with pytest.raises(NetpbmError):
        encode(np.zeros((2, 3, 3)))


# -- datasets ---------------------------------------------------------------

def make_tree(root, n_tumor, n_non, size=(4, 4)):
    for name, n in (("tumor", n_tumor), ("non_tumor", n_non)):
        (root / name).mkdir(parents=True)
        for i in range(n):
            write_image(root / name / f"img{i}.pgm", np.full((1, *size), i / 10))


def test_load_order_and_labels(tmp_path):
    make_tree(tmp_path, 3, 2)
    ds = load_dataset(tmp_path)
    assert ds.labels.tolist() == [1, 1, 1, 0, 0]
    assert ds.ids == ["tumor/img0", "tumor/img1", "tumor/img2", "non_tumor/img0", "non_tumor/img1"]
    assert ds.image_shape == (1, 4, 4)
    assert len(ds.samples) == 5


def test_empty_class_warns(tmp_path, caplog):
    make_tree(tmp_path, 0, 2)
    with caplog.at_level(logging.WARNING):
        ds = load_dataset(tmp_path)
    assert len(ds) == 2
    assert "imbalanced" in caplog.text


def test_mixed_shapes_name_the_file(tmp_path):
    make_tree(tmp_path, 2, 1)
    write_image(tmp_path / "non_tumor" / "odd.pgm", np.zeros((1, 5, 4)))
    with pytest.raises(DatasetError, match="odd.pgm"):
        load_dataset(tmp_path)


def test_missing_class_dir(tmp_path):
    (tmp_path / "tumor").mkdir()
    with pytest.raises(DatasetError, match="non_tumor"):
        load_dataset(tmp_path)


def tiny(n_pos, n_neg):
    labels = np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)]
    return Dataset(np.zeros((len(labels), 1, 1, 1)), labels, [f"s{i}" for i in range(len(labels))])


def test_split_sizes_large():
    tr, va = split(tiny(2590, 500), 0.8, seed=42)
    assert len(tr) == 2472 and len(va) == 618
    assert int(tr.labels.sum()) == 2072 and int(va.labels.sum()) == 518


def test_split_is_disjoint_and_stratified():
    ds = tiny(7, 5)
    tr, va = split(ds, 0.8, seed=1)
    assert set(tr.ids).isdisjoint(va.ids) and len(tr) + len(va) == 12
    # round(0.8 * 7) = 6, round(0.8 * 5) = 4
    assert int(tr.labels.sum()) == 6 and int((tr.labels == 0).sum()) == 4
    tr2, _ = split(ds, 0.8, seed=1)
    assert tr.ids == tr2.ids


def test_split_errors():
    with pytest.raises(DatasetError):
        split(tiny(1, 5), 0.8, seed=0)
    with pytest.raises(ValueError):
        split(tiny(3, 3), 1.0, seed=0)


def test_synthetic_dataset(tmp_path):
    ds = make_synthetic_dataset(500, image_size=20, seed=3)
    assert len(ds) == 1000 and ds.image_shape == (1, 20, 20)
    means = ds.images.mean(axis=(1, 2, 3))
    assert means[ds.labels == 1].mean() > means[ds.labels == 0].mean()
    for sid, (r0, c0, r1, c1) in ds.boxes.items():
        assert sid.startswith("tumor/") and 0 <= r0 <= r1 < 20 and 0 <= c0 <= c1 < 20
    again = make_synthetic_dataset(500, image_size=20, seed=3)
    np.testing.assert_array_equal(ds.images, again.images)
    small = ds.subset(list(range(3)) + list(range(500, 503)))
    write_dataset(small, tmp_path)
    back = load_dataset(tmp_path)
    np.testing.assert_array_equal(back.images, small.images)
    assert back.boxes == small.boxes


def test_seeds():
    assert subseed(1, "a") == subseed(1, "a")
    assert subseed(1, "a") != subseed(1, "b") != subseed(2, "a")
    assert substream(5, "x").random() == substream(5, "x").random()


# -- PCA --------------------------------------------------------------------

def test_pca_axis_aligned():
    s, t = math.sqrt(6.0), math.sqrt(1.5)
    x = np.array([[s, 0], [-s, 0], [0, t], [0, -t]])  # variances 4 and 1 (n - 1 denominator)
    m = pca_fit(x, 2)
    np.testing.assert_allclose(m.explained_variance, [4.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(m.components, np.eye(2), atol=1e-12)


def test_pca_three_points_by_hand():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    m = pca_fit(x, 1)
    r = math.sqrt(2.0)
    np.testing.assert_allclose(m.components, [[1 / r, 1 / r]], atol=1e-12)
    np.testing.assert_allclose(pca_transform(m, x)[:, 0], [-r, 0.0, r], atol=1e-12)
    assert m.explained_variance[0] == pytest.approx(2.0)


def test_pca_sign_rule_and_orthonormality():
    rng = np.random.default_rng(0)
    m = pca_fit(rng.normal(size=(50, 10)) @ rng.normal(size=(10, 10)), 4)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(4), atol=1e-10)
    for v in m.components:
        assert v[np.argmax(np.abs(v))] > 0


def test_power_iteration_matches_eigh():
    rng = np.random.default_rng(1)
    scales = np.linspace(10, 1, 100)
    x = rng.normal(size=(300, 100)) * scales
    m = pca_fit(x, 5)  # d > 64 uses power iteration
    xc = x - x.mean(axis=0)
    vals, vecs = np.linalg.eigh(xc.T @ xc / 299)
    np.testing.assert_allclose(m.explained_variance, vals[::-1][:5], rtol=1e-8)
    np.testing.assert_allclose(np.abs(m.components @ vecs[:, ::-1][:, :5]), np.eye(5), atol=1e-6)


def test_power_deflation_direct():
    cov = np.diag([5.0, 3.0, 1.0])
    vals, vecs = _power_deflation(cov, 2)
    np.testing.assert_allclose(vals, [5.0, 3.0], atol=1e-10)


def test_pca_errors_and_io(tmp_path):
    with pytest.raises(ValueError):
        pca_fit(np.ones((5, 3)), 1)
    with pytest.raises(ValueError):
        pca_fit(np.random.default_rng(0).normal(size=(3, 5)), 3)
    m = pca_fit(np.random.default_rng(0).normal(size=(10, 4)), 2)
    back = load_pca(save_pca(m, tmp_path / "p"))
    np.testing.assert_array_equal(back.components, m.components)
    x = np.random.default_rng(1).normal(size=(3, 4))
    np.testing.assert_allclose(m.inverse_transform(m.transform(x)), m.mean + (x - m.mean) @ m.components.T @ m.components)
