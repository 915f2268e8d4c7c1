import gzip
import struct

import numpy as np
import pytest

from routegrad.dataio import (
    CIFAR_RECORD,
    DataConsistencyError,
    DataFormatError,
    augment,
    hflip,
    load_cifar_bin,
    load_idx,
    random_crop,
    subtract_mean,
)


def _idx_images(arr: np.ndarray) -> bytes:
    return struct.pack(">IIII", 0x00000803, *arr.shape) + arr.astype(np.uint8).tobytes()


def _idx_labels(arr: np.ndarray) -> bytes:
    return struct.pack(">II", 0x00000801, len(arr)) + arr.astype(np.uint8).tobytes()


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (3, 4, 5), dtype=np.uint8)
    labels = np.array([4, 0, 9], dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    ip.write_bytes(_idx_images(imgs))
    lp.write_bytes(_idx_labels(labels))
    return ip, lp, imgs, labels


def test_idx_round_trip(idx_pair):
    ip, lp, imgs, labels = idx_pair
    ds = load_idx(ip, lp)
    assert ds.images.shape == (3, 1, 4, 5) and ds.images.dtype == np.float32
    assert np.array_equal(np.rint(ds.images[:, 0] * 255).astype(np.uint8), imgs)
    assert ds.labels.tolist() == [4, 0, 9]
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_idx_gzip(idx_pair, tmp_path):
    ip, lp, imgs, _ = idx_pair
    gz = tmp_path / "img.idx.gz"
    gz.write_bytes(gzip.compress(ip.read_bytes()))
    assert np.array_equal(load_idx(gz, lp, dtype=np.float64).images, load_idx(ip, lp, dtype=np.float64).images)


def test_idx_bad_magic(idx_pair):
    ip, lp, _, _ = idx_pair
    raw = bytearray(ip.read_bytes())
    raw[3] = 0x01
    ip.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError, match="bad magic 0x00000801, expected 0x00000803"):
        load_idx(ip, lp)


def test_idx_truncated(idx_pair):
    ip, lp, _, _ = idx_pair
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(DataFormatError, match="expected 60 data bytes"):
        load_idx(ip, lp)
    ip.write_bytes(b"\x00\x00")
    with pytest.raises(DataFormatError):
        load_idx(ip, lp)


def test_idx_count_mismatch(idx_pair):
    ip, lp, _, _ = idx_pair
    lp.write_bytes(_idx_labels(np.array([1, 2])))
    with pytest.raises(DataConsistencyError):
        load_idx(ip, lp)


def _cifar_bytes(labels, rng):
    recs = []
    for y in labels:
        recs.append(bytes([y]) + rng.integers(0, 256, 3072, dtype=np.uint8).tobytes())
    return b"".join(recs)


def test_cifar_layout(tmp_path):
    rng = np.random.default_rng(1)
    raw = _cifar_bytes([3, 7], rng)
    p = tmp_path / "batch.bin"
    p.write_bytes(raw)
    ds = load_cifar_bin(p)
    assert ds.images.shape == (2, 3, 32, 32)
    assert ds.labels.tolist() == [3, 7]
    # second record, green plane, row 0 col 1
    assert ds.images[1, 1, 0, 1] * 255 == pytest.approx(raw[CIFAR_RECORD + 1 + 1024 + 1])


def test_cifar_bad_length(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\x00" * (CIFAR_RECORD + 5))
    with pytest.raises(DataFormatError, match="multiple of 3073"):
        load_cifar_bin(p)


def test_cifar_full_size_batch(tmp_path):
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 10, 10000, dtype=np.uint8)
    pixels = rng.integers(0, 256, (10000, 3072), dtype=np.uint8)
    p = tmp_path / "data_batch_1.bin"
    p.write_bytes(np.concatenate([labels[:, None], pixels], axis=1).tobytes())
    ds = load_cifar_bin([p, p])
    assert ds.images.shape == (20000, 3, 32, 32)
    assert np.array_equal(ds.labels[:10000], labels)


def test_hflip_involution_and_deterministic():
    x = np.random.default_rng(3).standard_normal((6, 2, 4, 5))
    assert np.array_equal(hflip(hflip(x, p=1.0), p=1.0), x)
    assert np.array_equal(hflip(x, p=1.0)[0, 0, 0], x[0, 0, 0, ::-1])
    a = hflip(x, np.random.default_rng(9), 0.5)
    b = hflip(x, np.random.default_rng(9), 0.5)
    assert np.array_equal(a, b)


def test_random_crop():
    x = np.random.default_rng(4).standard_normal((5, 1, 6, 6))
    assert np.array_equal(random_crop(x, np.random.default_rng(0), 0), x)
    y = random_crop(x, np.random.default_rng(0), 2)
    assert y.shape == x.shape
    assert np.array_equal(y, random_crop(x, np.random.default_rng(0), 2))
    assert np.array_equal(augment(x, np.random.default_rng(0)), x)


def test_mean_subtraction():
    rng = np.random.default_rng(5)
    train = rng.random((50, 1, 4, 4)).astype(np.float32)
    from routegrad.dataio import Dataset
    tr, te = subtract_mean(Dataset(train, np.zeros(50, int)), Dataset(train[:5], np.zeros(5, int)))
    assert np.abs(tr.images.mean(axis=0)).max() <= 1e-6
    assert np.allclose(te.images, train[:5] - train.mean(axis=0, dtype=np.float64), atol=1e-6)
    assert tr.per_pixel_mean.shape == (1, 4, 4)


def test_canonical_mnist(mnist_path):
    train = load_idx(mnist_path / "train-images-idx3-ubyte", mnist_path / "train-labels-idx1-ubyte")
    test = load_idx(mnist_path / "t10k-images-idx3-ubyte", mnist_path / "t10k-labels-idx1-ubyte")
    assert train.images.shape == (60000, 1, 28, 28)
    assert test.images.shape == (10000, 1, 28, 28)
    assert train.labels[0] == 5 and test.labels[0] == 7
    assert np.bincount(train.labels).tolist() == [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949]
    assert np.bincount(test.labels).tolist() == [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]
