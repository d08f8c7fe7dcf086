"""Dataset ingestion, augmentation, and synthetic data generation.

Two on-disk dataset forms are supported:

  1. A directory of class folders holding raw binary PGM (P5) or PPM (P6)
     images, maxval 255. An optional ``split_manifest.txt`` in the root
     lists "relative/path train|test" per line; unlisted images are train.
  2. A single binary tensor file (extension-agnostic), little-endian:

        magic  b"BNTD"
        u16    format version (1)
        u16    pixel bit depth Nb (<= 8 stored as u8, else u16)
        u32    N, H, W, C, class count
        u8/u16 images, N*H*W*C row-major
        u32    labels, N
        u8     split tags, N (0 = train, 1 = test)

All randomness flows from explicit seeds; per-sample augmentation streams
derive from (seed, epoch, sample index).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"BNTD"
_SPLIT_NAMES = ("train", "test")


class DataError(ValueError):
    """Malformed dataset file or range violation."""


@dataclass
class Dataset:
    images: np.ndarray          # (N, H, W, C) unsigned ints in [0, 2^Nb - 1]
    labels: np.ndarray          # (N,) int64 < classes
    splits: np.ndarray          # (N,) uint8: 0 train, 1 test
    classes: int
    nb_bits: int = 8

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=np.uint8)
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        hi = (1 << self.nb_bits) - 1
        if self.images.min() < 0 or self.images.max() > hi:
            raise DataError(f"pixel values outside [0, {hi}]")
        if len(self.labels) and self.labels.max() >= self.classes:
            raise DataError("label >= class count")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, split: str) -> "Dataset":
        tag = _SPLIT_NAMES.index(split)
        sel = self.splits == tag
        return Dataset(self.images[sel], self.labels[sel], self.splits[sel],
                       self.classes, self.nb_bits)

    def normalize(self, raw: np.ndarray | None = None) -> np.ndarray:
        """Scale integer pixels to [0, 1] floats (done once, at the encoder
        boundary; gamma inversion is the encoder's concern)."""
        if raw is None:
            raw = self.images
        return raw.astype(np.float64) / ((1 << self.nb_bits) - 1)


# ---------------------------------------------------------------------------
# Augmentation


@dataclass
class AugmentConfig:
    pad: int = 0                # all-sided zero padding before random crop
    crop: int | None = None     # crop size (None: original size)
    flip_prob: float = 0.5      # horizontal flip probability (0 disables)
    cutout: int = 0             # square cutout side, 0 disables


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample RNG stream derived from (seed, epoch, index)."""
    return np.random.default_rng([seed, epoch, index])


def augment(image: np.ndarray, cfg: AugmentConfig,
            rng: np.random.Generator) -> np.ndarray:
    """Zero-pad + random crop, random horizontal flip, random cutout
    (region zeroed, pre-normalization). Never changes the label."""
    h, w = image.shape[:2]
    crop_h = crop_w = cfg.crop if cfg.crop is not None else None
    if cfg.pad or cfg.crop is not None:
        crop_h = crop_h or h
        crop_w = crop_w or w
        padded = np.pad(image, ((cfg.pad, cfg.pad), (cfg.pad, cfg.pad),
                                (0, 0)))
        max_y = padded.shape[0] - crop_h
        max_x = padded.shape[1] - crop_w
        if max_y < 0 or max_x < 0:
            raise DataError("crop larger than padded image")
        y = int(rng.integers(0, max_y + 1))
        x = int(rng.integers(0, max_x + 1))
        image = padded[y:y + crop_h, x:x + crop_w]
    if cfg.flip_prob and rng.random() < cfg.flip_prob:
        image = image[:, ::-1]
    if cfg.cutout:
        s = cfg.cutout
        if s > image.shape[0] or s > image.shape[1]:
            raise DataError(f"cutout {s} larger than image {image.shape[:2]}")
        y = int(rng.integers(0, image.shape[0] - s + 1))
        x = int(rng.integers(0, image.shape[1] - s + 1))
        image = image.copy()
        image[y:y + s, x:x + s] = 0
    return image


# ---------------------------------------------------------------------------
# Synthetic desk-scale data


def make_synthetic(classes: int, n: int, size: int, seed: int,
                   test_fraction: float = 1.0 / 6.0,
                   nb_bits: int = 8) -> Dataset:
    """Class-separable oriented gratings in a narrow dark intensity band.

    Class c selects an orientation (c mod K) and an intensity level
    (c div K); each sample draws a random phase, small orientation jitter,
    and pixel noise. All discriminative intensities sit in a compressed
    band of the value range, so classification hinges on how well the
    encoder resolves that band. Labels are assigned round-robin so the
    class histogram is balanced within 1; the last test_fraction of
    samples form the holdout split. Deterministic given
    (classes, n, size, seed).
    """
    rng = np.random.default_rng(seed)
    k_orient = max(2, (classes + 1) // 2)
    levels = int(np.ceil(classes / k_orient))
    yy, xx = np.mgrid[0:size, 0:size] / size
    hi = (1 << nb_bits) - 1

    labels = np.arange(n) % classes
    images = np.empty((n, size, size, 3), dtype=np.uint8)
    for i in range(n):
        c = labels[i]
        theta = np.pi * (c % k_orient) / k_orient + rng.normal(0, 0.05)
        freq = 3.0 + 2.0 * (c % k_orient != 0)
        level = (c // k_orient) / max(1, levels - 1) if levels > 1 else 0.5
        base = 0.36 + 0.07 * level
        amp = 0.03
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta)
                                          + yy * np.sin(theta)) + phase)
        img = base + amp * wave
        # mild per-channel tint so color carries part of the class signal
        tint = 0.015 * np.array([np.cos(2 * np.pi * c / classes),
                                 np.cos(2 * np.pi * c / classes + 2.1),
                                 np.cos(2 * np.pi * c / classes + 4.2)])
        chans = img[:, :, None] + tint[None, None, :]
        chans = chans + rng.normal(0, 0.01, chans.shape)
        images[i] = np.clip(np.rint(chans * hi), 0, hi).astype(np.uint8)

    perm = rng.permutation(n)
    images, labels = images[perm], labels[perm]
    n_test = int(round(n * test_fraction))
    splits = np.zeros(n, dtype=np.uint8)
    if n_test:
        splits[-n_test:] = 1
    return Dataset(images, labels, splits, classes, nb_bits)


# ---------------------------------------------------------------------------
# Binary tensor file


def save_dataset(ds: Dataset, path) -> None:
    dtype = "u1" if ds.nb_bits <= 8 else "<u2"
    n, h, w, c = ds.images.shape
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HHIIIII", 1, ds.nb_bits, n, h, w, c,
                            ds.classes))
        f.write(ds.images.astype(dtype).tobytes())
        f.write(ds.labels.astype("<u4").tobytes())
        f.write(ds.splits.astype("u1").tobytes())
    os.replace(tmp, path)


def _load_tensor_file(path) -> Dataset:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise DataError(f"bad magic {magic!r} at byte offset 0")
        head = f.read(24)
        if len(head) != 24:
            raise DataError(f"truncated header at byte offset {4 + len(head)}")
        version, nb, n, h, w, c, classes = struct.unpack("<HHIIIII", head)
        if version != 1:
            raise DataError(f"unsupported version {version} at byte offset 4")
        dtype = np.dtype("u1") if nb <= 8 else np.dtype("<u2")
        count = n * h * w * c
        raw = f.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise DataError(f"truncated image block at byte offset "
                            f"{28 + len(raw)}")
        images = np.frombuffer(raw, dtype=dtype).reshape(n, h, w, c)
        labels = np.frombuffer(f.read(4 * n), dtype="<u4").astype(np.int64)
        splits = np.frombuffer(f.read(n), dtype="u1")
        if len(labels) != n or len(splits) != n:
            raise DataError("truncated label/split block")
    return Dataset(images.copy(), labels, splits.copy(), classes, nb)


# ---------------------------------------------------------------------------
# PGM/PPM (raw binary subset, maxval 255) and class-folder ingestion


def read_pnm(path) -> np.ndarray:
    """Read a raw P5 (gray) or P6 (RGB) image, maxval <= 255."""
    with open(path, "rb") as f:
        data = f.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"corrupt PNM header at byte offset {start}")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic, width, height, maxval = (fields[0], int(fields[1]),
                                    int(fields[2]), int(fields[3]))
    if magic not in (b"P5", b"P6"):
        raise DataError(f"unsupported PNM magic {magic!r} at byte offset 0")
    if maxval > 255:
        raise DataError("only maxval <= 255 supported")
    c = 1 if magic == b"P5" else 3
    raw = data[pos:pos + width * height * c]
    if len(raw) != width * height * c:
        raise DataError(f"truncated PNM pixel data at byte offset {pos}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, c).copy()


def write_pnm(image: np.ndarray, path) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        image = image[:, :, None]
    magic = b"P5" if image.shape[2] == 1 else b"P6"
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        f.write(image.tobytes())


def _load_folder(path) -> Dataset:
    class_dirs = sorted(d for d in os.listdir(path)
                        if os.path.isdir(os.path.join(path, d)))
    if not class_dirs:
        raise DataError(f"no class folders under {path}")
    manifest: dict[str, int] = {}
    mpath = os.path.join(path, "split_manifest.txt")
    if os.path.exists(mpath):
        with open(mpath) as f:
            for line in f:
                if line.strip():
                    rel, tag = line.split()
                    manifest[rel] = _SPLIT_NAMES.index(tag)
    images, labels, splits = [], [], []
    for label, cname in enumerate(class_dirs):
        cdir = os.path.join(path, cname)
        for fname in sorted(os.listdir(cdir)):
            if not fname.lower().endswith((".pgm", ".ppm")):
                continue
            images.append(read_pnm(os.path.join(cdir, fname)))
            labels.append(label)
            splits.append(manifest.get(f"{cname}/{fname}", 0))
    if not images:
        raise DataError(f"no PGM/PPM images under {path}")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DataError(f"inconsistent image shapes: {sorted(shapes)}")
    return Dataset(np.stack(images), np.array(labels),
                   np.array(splits, dtype=np.uint8), classes=len(class_dirs))


def load_dataset(path) -> Dataset:
    """Load either a class-folder directory or a binary tensor file."""
    if os.path.isdir(path):
        return _load_folder(path)
    return _load_tensor_file(path)
