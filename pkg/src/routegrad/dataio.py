"""MNIST IDX / CIFAR-10 binary loaders, mean subtraction and augmentation."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


class DataFormatError(ValueError):
    """File bytes do not follow the expected format."""


class DataConsistencyError(ValueError):
    """Files parse individually but disagree with each other."""


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W], float
    labels: np.ndarray  # [N], int64
    per_pixel_mean: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.per_pixel_mean)


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 8:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n_bytes = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != n_bytes:
        raise DataFormatError(f"{path}: expected {n_bytes} data bytes for dims {dims}, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, dtype=np.float32) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if len(images) != len(labels):
        raise DataConsistencyError(f"{len(images)} images but {len(labels)} labels")
    x = (images.astype(dtype) / np.asarray(255.0, dtype=dtype))[:, None, :, :]
    return Dataset(np.ascontiguousarray(x), labels.astype(np.int64))


def load_cifar_bin(paths, dtype=np.float32) -> Dataset:
    """Load CIFAR-10 binary batches: 1 label byte + 3072 pixel bytes (R, G, B planes) per record."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    xs, ys = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(f"{path}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    images = np.concatenate(xs).astype(dtype) / np.asarray(255.0, dtype=dtype)
    return Dataset(images, np.concatenate(ys))


def subtract_mean(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Subtract the per-pixel mean of ``train`` from every given split."""
    mean = train.images.mean(axis=0, dtype=np.float64)
    out = []
    for ds in (train, *others):
        imgs = (ds.images - mean).astype(ds.images.dtype)
        out.append(Dataset(imgs, ds.labels, mean.astype(ds.images.dtype)))
    return tuple(out)


def hflip(batch: np.ndarray, rng: np.random.Generator | None = None, p: float = 0.5) -> np.ndarray:
    """Mirror each image left-right with probability ``p``."""
    if p >= 1.0:
        flip = np.ones(len(batch), dtype=bool)
    else:
        flip = rng.random(len(batch)) < p
    out = batch.copy()
    out[flip] = out[flip, :, :, ::-1]
    return out


def random_crop(batch: np.ndarray, rng: np.random.Generator, pad: int) -> np.ndarray:
    """Zero-pad by ``pad`` and cut a random window of the original size per image."""
    if pad <= 0:
        return batch.copy()
    n, c, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
    out = np.empty_like(batch)
    for i, (dy, dx) in enumerate(offs):
        out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    return out


def augment(batch: np.ndarray, rng: np.random.Generator, hflip_p: float = 0.0, crop_pad: int = 0) -> np.ndarray:
    out = batch
    if crop_pad:
        out = random_crop(out, rng, crop_pad)
    if hflip_p:
        out = hflip(out, rng, hflip_p)
    return out
