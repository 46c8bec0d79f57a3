"""Synthetic shape dataset, a raw binary image format and seeded batching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptFile, DimMismatch, InvalidConfig

__all__ = ["Dataset", "synth_shapes", "write_raw", "load_raw", "batches", "train_eval_split", "desk_split_from_file",
           "RAW_MAGIC"]

RAW_MAGIC = "HVRAW1"


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, H, W, C) in [0, 1]
    labels: np.ndarray  # (N,) int
    classes: int
    split: str = "all"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DimMismatch(f"images must be N x H x W x C, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise DimMismatch("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise InvalidConfig("label out of range")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.classes, split or self.split)


def _template(c: int, s: int, rng) -> np.ndarray:
    """Class-``c`` stroke pattern on an s x s canvas with random placement."""
    img = np.zeros((s, s))
    w = max(1, s // 4)
    lo, hi = 0, s - w
    a = rng.integers(lo, hi + 1)
    if c == 0:  # horizontal bar
        img[a:a + w, :] = 1
    elif c == 1:  # vertical bar
        img[:, a:a + w] = 1
    elif c == 2:  # main diagonal
        k = rng.integers(-1, 2)
        img[np.eye(s, k=k, dtype=bool)] = 1
    elif c == 3:  # anti-diagonal
        k = rng.integers(-1, 2)
        img[np.fliplr(np.eye(s, k=k, dtype=bool))] = 1
    elif c == 4:  # plus
        b = rng.integers(lo, hi + 1)
        img[a:a + w, :] = 1
        img[:, b:b + w] = 1
    elif c == 5:  # X
        img[np.eye(s, dtype=bool)] = 1
        img[np.fliplr(np.eye(s, dtype=bool))] = 1
    elif c == 6:  # filled blob
        h = max(2, s // 2)
        r, q = rng.integers(0, s - h + 1, size=2)
        img[r:r + h, q:q + h] = 1
    elif c == 7:  # hollow box
        h = max(3, s // 2 + 1)
        r, q = rng.integers(0, s - h + 1, size=2)
        img[r:r + h, q:q + h] = 1
        img[r + 1:r + h - 1, q + 1:q + h - 1] = 0
    elif c == 8:  # corner
        h = max(2, s // 2)
        r, q = rng.integers(0, s - h + 1, size=2)
        img[r:r + h, q] = 1
        img[r + h - 1, q:q + h] = 1
    else:  # two dots
        p = rng.choice(s * s, size=2, replace=False)
        img.flat[p] = 1
    return img


def synth_shapes(n: int, image_size: int = 8, classes: int = 4, seed: int = 0, channels: int = 1,
                 noise: float = 0.25) -> Dataset:
    """Randomised bars, crosses and blobs with additive noise."""
    if not 2 <= classes <= 10:
        raise InvalidConfig("classes must be in 2..10")
    if image_size < 4:
        raise InvalidConfig("image_size must be at least 4")
    if n < 0:
        raise InvalidConfig("n must be non-negative")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    imgs = np.empty((n, image_size, image_size, channels))
    for i, c in enumerate(labels):
        base = _template(int(c), image_size, rng) * rng.uniform(0.6, 1.0)
        tint = rng.uniform(0.7, 1.0, size=channels)
        x = base[:, :, None] * tint + rng.normal(0.0, noise, size=(image_size, image_size, channels))
        imgs[i] = np.clip(x, 0.0, 1.0)
    return Dataset(imgs, labels, classes, "all")


def train_eval_split(ds: Dataset, eval_frac: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < eval_frac < 1:
        raise InvalidConfig("eval_frac must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    k = int(round(len(ds) * eval_frac))
    return ds.subset(np.sort(perm[k:]), "train"), ds.subset(np.sort(perm[:k]), "eval")


def write_raw(ds: Dataset, path) -> None:
    n, h, w, c = ds.images.shape
    with open(path, "wb") as fh:
        fh.write(f"{RAW_MAGIC} {n} {h} {w} {c} {ds.classes}\n".encode())
        fh.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<i4").tobytes())


def load_raw(path, header: tuple[int, int, int, int] | None = None, split: str = "all") -> Dataset:
    """Read the raw format.  ``header`` = expected (h, w, c, classes)."""
    with open(path, "rb") as fh:
        line = fh.readline()
        body = fh.read()
    try:
        magic, *dims = line.decode("ascii").split()
        n, h, w, c, classes = (int(v) for v in dims)
    except (UnicodeDecodeError, ValueError):
        raise CorruptFile("unreadable raw header") from None
    if magic != RAW_MAGIC:
        raise CorruptFile(f"bad magic {magic!r}")
    if header is not None and tuple(header) != (h, w, c, classes):
        raise DimMismatch(f"file holds {(h, w, c, classes)}, expected {tuple(header)}")
    npix = n * h * w * c
    if len(body) != 4 * npix + 4 * n:
        raise CorruptFile(f"payload is {len(body)} bytes, header implies {4 * npix + 4 * n}")
    imgs = np.frombuffer(body, dtype="<f4", count=npix).reshape(n, h, w, c).astype(np.float64)
    labels = np.frombuffer(body, dtype="<i4", count=n, offset=4 * npix).astype(np.int64)
    if n and (labels.min() < 0 or labels.max() >= classes):
        raise CorruptFile("label out of range")
    return Dataset(imgs, labels, classes, split)


def batches(ds: Dataset, batch_size: int, seed: int | None = 0, drop_last: bool = False):
    """Yield (images, labels); shuffled by ``seed`` (None keeps file order)."""
    if batch_size < 1:
        raise InvalidConfig("batch_size must be positive")
    idx = np.arange(len(ds)) if seed is None else np.random.default_rng(seed).permutation(len(ds))
    for s in range(0, len(idx), batch_size):
        b = idx[s:s + batch_size]
        if drop_last and len(b) < batch_size:
            break
        yield ds.images[b], ds.labels[b]


def desk_split_from_file(path, cfg, eval_frac: float = 0.25, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Load a raw file whose dims must match ``cfg`` and split it."""
    ds = load_raw(path, (cfg.image, cfg.image, cfg.channels, cfg.classes))
    return train_eval_split(ds, eval_frac, seed)
