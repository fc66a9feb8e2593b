import numpy as np
import pytest
from PIL import Image as PILImage

from octdenoise.datasets import (
    DatasetError,
    Label,
    LabeledDataset,
    LabeledSample,
    batch_iter,
    corrupt,
    derive_seed,
    ingest_directory,
    load_image,
    make_synthetic,
    resize_to,
    save_image,
    write_dataset,
)


def test_load_extremes(tmp_path):
    for value in (0, 255):
        p = tmp_path / f"v{value}.png"
        PILImage.fromarray(np.full((5, 7), value, np.uint8)).save(p)
        img = load_image(p)
        assert img.shape == (5, 7)
        assert np.all(img == value / 255)


def test_png_roundtrip_bytes(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / "a.png"
    PILImage.fromarray(rng.integers(0, 256, (16, 12), dtype=np.uint8)).save(src)
    out = tmp_path / "b.png"
    save_image(out, load_image(src))
    assert out.read_bytes() == src.read_bytes()


def test_pgm_roundtrip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (9, 11)) / 255
    save_image(tmp_path / "x.pgm", img)
    assert (tmp_path / "x.pgm").read_bytes()[:2] == b"P5"
    np.testing.assert_array_equal(load_image(tmp_path / "x.pgm"), img)


def test_rgb_is_channel_mean(tmp_path):
    arr = np.zeros((2, 2, 3), np.uint8)
    arr[..., 0] = 30
    arr[..., 1] = 60
    arr[..., 2] = 90
    PILImage.fromarray(arr).save(tmp_path / "rgb.png")
    np.testing.assert_allclose(load_image(tmp_path / "rgb.png"), 60 / 255)


def test_load_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_image(tmp_path / "missing.png")
    PILImage.fromarray(np.zeros((4, 4), np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(DatasetError):
        load_image(tmp_path / "deep.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(DatasetError):
        load_image(tmp_path / "junk.png")


# ---------------------------------------------------------------- corrupt


def test_corrupt_sigma_zero():
    img = np.random.default_rng(2).random((8, 8))
    np.testing.assert_array_equal(corrupt(img, 0.0, seed=3), img)


def test_corrupt_sample_std():
    img = np.full((512, 512), 0.5)
    out = corrupt(img, 0.1, seed=4)
    assert 0.097 <= np.std(out - img) <= 0.103


def test_corrupt_mean_preserving():
    img = np.full((256, 256), 0.5)
    sigma = 0.1
    out = corrupt(img, sigma, seed=5)
    assert abs(out.mean() - img.mean()) < 3 * sigma / np.sqrt(img.size)


def test_corrupt_deterministic_and_clipped():
    img = np.random.default_rng(6).random((32, 32))
    a, b = corrupt(img, 0.3, seed=7), corrupt(img, 0.3, seed=7)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, corrupt(img, 0.3, seed=8))
    with pytest.raises(ValueError):
        corrupt(img, -0.1)


def test_derive_seed_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
    assert 0 <= derive_seed(0) < 2**64


# ---------------------------------------------------------------- resize


def scripted_bilinear(img, n):
    """Per-pixel half-pixel-centre bilinear interpolation with clamped edges."""
    h, w = img.shape
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            y = min(max((i + 0.5) * h / n - 0.5, 0.0), h - 1)
            x = min(max((j + 0.5) * w / n - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            dy, dx = y - y0, x - x0
            out[i, j] = (img[y0, x0] * (1 - dy) * (1 - dx) + img[y0, x1] * (1 - dy) * dx
                         + img[y1, x0] * dy * (1 - dx) + img[y1, x1] * dy * dx)
    return out


def test_resize_identity_and_constant():
    img = np.random.default_rng(9).random((12, 12))
    np.testing.assert_array_equal(resize_to(img, 12), img)
    np.testing.assert_allclose(resize_to(np.full((7, 7), 0.3), 16), 0.3, atol=1e-15)


def test_resize_matches_scripted_oracle():
    img = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = resize_to(img, 4)
    np.testing.assert_allclose(out, scripted_bilinear(img, 4), atol=1e-12)
    # frozen: row 1 of the 4x4 upsample
    np.testing.assert_allclose(out[1], [0.25, 0.375, 0.625, 0.75], atol=1e-12)


def test_resize_downsample_oracle():
    img = np.random.default_rng(10).random((9, 13))
    np.testing.assert_allclose(resize_to(img, 5), scripted_bilinear(img, 5), atol=1e-12)


# ---------------------------------------------------------------- synthetic


def test_make_synthetic_counts():
    d = make_synthetic(10, 32, seed=0)
    assert d.sizes == {"train": 32, "val": 4, "test": 4}
    for name in ("train", "val", "test"):
        hist = d.histogram(name)
        assert len(set(hist.values())) == 1
    for s in d.train + d.val + d.test:
        assert s.image.shape == (32, 32)
        assert 0 <= s.image.min() and s.image.max() <= 1


def test_make_synthetic_deterministic():
    a, b = make_synthetic(4, 16, seed=11), make_synthetic(4, 16, seed=11)
    for sa, sb in zip(a.train + a.val + a.test, b.train + b.val + b.test):
        assert sa.label == sb.label and np.array_equal(sa.image, sb.image)
    c = make_synthetic(4, 16, seed=12)
    assert not np.array_equal(a.train[0].image, c.train[0].image)


# ---------------------------------------------------------------- ingestion


def _write_tree(root, per_class=2, splits=("train", "val", "test")):
    rng = np.random.default_rng(13)
    for split in splits:
        for label in Label:
            for i in range(per_class):
                save_image(root / split / label.name / f"{i}.png", rng.random((6, 6)))


def test_ingest_directory(tmp_path):
    _write_tree(tmp_path)
    d = ingest_directory(tmp_path)
    assert d.sizes == {"train": 8, "val": 8, "test": 8}
    for s in d.train:
        assert s.source_path.split("/")[1] == s.label.name
    paths = [s.source_path for s in d.train]
    assert paths == sorted(paths)


def test_ingest_deterministic_and_resizes(tmp_path):
    _write_tree(tmp_path)
    a, b = ingest_directory(tmp_path, size=4), ingest_directory(tmp_path, size=4)
    assert [s.source_path for s in a.test] == [s.source_path for s in b.test]
    assert all(s.image.shape == (4, 4) for s in a.train)


def test_ingest_unknown_class(tmp_path):
    _write_tree(tmp_path)
    bad = tmp_path / "train" / "GLAUCOMA"
    bad.mkdir()
    with pytest.raises(DatasetError, match="GLAUCOMA"):
        ingest_directory(tmp_path)


def test_ingest_missing_class(tmp_path):
    _write_tree(tmp_path)
    for f in (tmp_path / "val" / "DME").iterdir():
        f.unlink()
    (tmp_path / "val" / "DME").rmdir()
    with pytest.raises(DatasetError, match="DME"):
        ingest_directory(tmp_path)


def test_ingest_empty_split(tmp_path):
    _write_tree(tmp_path, splits=("train", "test"))
    with pytest.raises(DatasetError, match="val"):
        ingest_directory(tmp_path)


def test_ingest_carves_validation(tmp_path):
    # same mechanism as the public layout: train/ and test/ on disk, val carved from train
    _write_tree(tmp_path, per_class=5, splits=("train", "test"))
    d = ingest_directory(tmp_path, val_count=4)
    assert d.sizes == {"train": 16, "val": 4, "test": 20}
    assert not {s.source_path for s in d.train} & {s.source_path for s in d.val}
    again = ingest_directory(tmp_path, val_count=4)
    assert [s.source_path for s in again.val] == [s.source_path for s in d.val]
    with pytest.raises(DatasetError):
        ingest_directory(tmp_path, val_count=21)


def test_disk_roundtrip_reproduces_synthetic(tmp_path):
    d = make_synthetic(5, 16, seed=14)
    write_dataset(d, tmp_path)
    back = ingest_directory(tmp_path)
    for name in ("train", "val", "test"):
        mem, disk = d.split(name), back.split(name)
        assert [s.source_path for s in mem] == [s.source_path for s in disk]
        for a, b in zip(mem, disk):
            assert a.label == b.label
            np.testing.assert_array_equal(a.image, b.image)


def test_dataset_rejects_overlapping_splits():
    s = LabeledSample(np.zeros((2, 2)), Label.CNV, "a.png")
    with pytest.raises(DatasetError):
        LabeledDataset(train=[s], val=[], test=[s])


# ---------------------------------------------------------------- batching


def _samples(n):
    return [LabeledSample(np.full((4, 4), i / n), Label(i % 4), f"{i}") for i in range(n)]


def test_batch_sizes():
    sizes = [x.shape[0] for x, _ in batch_iter(_samples(10), 4, shuffle_seed=0)]
    assert sizes == [4, 4, 2]


def test_batch_shape_and_labels():
    x, labels = next(iter(batch_iter(_samples(6), 6)))
    assert x.shape == (6, 1, 4, 4)
    assert labels.tolist() == [0, 1, 2, 3, 0, 1]


def test_batch_order_deterministic_and_partition():
    split = _samples(11)
    a = [idx.tolist() for _, _, idx in batch_iter(split, 3, shuffle_seed=5, with_indices=True)]
    b = [idx.tolist() for _, _, idx in batch_iter(split, 3, shuffle_seed=5, with_indices=True)]
    assert a == b
    flat = sorted(i for chunk in a for i in chunk)
    assert flat == list(range(11))


def test_batch_errors():
    with pytest.raises(DatasetError):
        list(batch_iter([], 2))
    with pytest.raises(ValueError):
        list(batch_iter(_samples(3), 0))
