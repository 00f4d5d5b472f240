"""Datasets: IDX ingestion, normalisation, affine augmentation, toy sets, splits."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, DomainError
from .tensor import DTYPE, SeededRng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxParseError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: {message} (at byte offset {offset})")
        self.path = str(path)
        self.offset = offset


class BadMagicError(IdxParseError):
    pass


class TruncatedIdxError(IdxParseError):
    pass


class CountMismatchError(IdxParseError):
    pass


@dataclass
class RawDataset:
    images: np.ndarray  # uint8 [N, H, W]
    labels: np.ndarray  # uint8 [N]

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")


@dataclass
class Dataset:
    features: np.ndarray  # [N, d] or [N, C, H, W]
    labels: np.ndarray  # int64 [N]
    n_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DomainError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.features.shape[1:])

    @property
    def is_image(self) -> bool:
        return self.features.ndim == 4

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, n))

    def flat(self) -> "Dataset":
        return Dataset(self.features.reshape(len(self), -1), self.labels, self.n_classes)


# -- IDX -------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _parse_idx(path, buf: bytes, magic: int, ndim: int):
    if len(buf) < 4:
        raise TruncatedIdxError(path, len(buf), "file too short for the magic number")
    (found,) = struct.unpack_from(">I", buf, 0)
    if found != magic:
        raise BadMagicError(path, 0, f"magic 0x{found:08x}, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise TruncatedIdxError(path, len(buf), "file ends inside the dimension header")
    dims = struct.unpack_from(">" + "I" * ndim, buf, 4)
    size = int(np.prod(dims, dtype=np.int64))
    if len(buf) < header + size:
        raise TruncatedIdxError(
            path, len(buf), f"payload holds {len(buf) - header} of {size} bytes")
    if len(buf) > header + size:
        raise IdxParseError(path, header + size, "trailing bytes after the payload")
    data = np.frombuffer(buf, dtype=np.uint8, count=size, offset=header)
    return data.reshape(dims).copy()


def load_idx(images_path, labels_path) -> RawDataset:
    """Read an IDX image/label file pair (``.gz`` files are decompressed)."""
    images = _parse_idx(images_path, _read_bytes(images_path), IMAGE_MAGIC, 3)
    labels = _parse_idx(labels_path, _read_bytes(labels_path), LABEL_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            labels_path, 4, f"{labels.shape[0]} labels for {images.shape[0]} images")
    return RawDataset(images, labels)


def write_idx(raw: RawDataset, images_path, labels_path) -> None:
    def dump(path, magic, arr):
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        blob = struct.pack(">I", magic) + struct.pack(">" + "I" * arr.ndim, *arr.shape)
        blob += arr.tobytes()
        path = Path(path)
        if path.suffix == ".gz":
            with gzip.open(path, "wb") as f:
                f.write(blob)
        else:
            path.write_bytes(blob)

    dump(images_path, IMAGE_MAGIC, raw.images)
    dump(labels_path, LABEL_MAGIC, raw.labels)


def normalize(raw: RawDataset, layout: str = "flat", n_classes: int = 10) -> Dataset:
    """Scale pixels to [0, 1]; ``flat`` gives [N, H*W], ``image`` gives [N, 1, H, W]."""
    x = raw.images.astype(DTYPE) / 255.0
    n = x.shape[0]
    if layout == "flat":
        x = x.reshape(n, -1)
    elif layout == "image":
        x = x.reshape(n, 1, *raw.images.shape[1:])
    else:
        raise DomainError(f"layout must be 'flat' or 'image', got {layout!r}")
    return Dataset(x, raw.labels.astype(np.int64), n_classes)


# -- augmentation ----------------------------------------------------------

@dataclass
class AugmentConfig:
    max_shift_px: int = 2
    max_rotation_deg: float = 15.0
    scale_range: Tuple[float, float] = (0.9, 1.1)
    copies_per_image: int = 1
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= 1.0 <= hi):
            raise DomainError(f"scale_range must satisfy 0 < lo <= 1 <= hi, got {self.scale_range}")
        if self.copies_per_image < 0 or self.max_shift_px < 0 or self.max_rotation_deg < 0:
            raise DomainError("augmentation magnitudes and copy count must be non-negative")


def affine_source_matrix(h: int, w: int, angle_rad: float, scale: float,
                         shift_x: float, shift_y: float) -> np.ndarray:
    """2x3 map from output pixel (x, y, 1) to its source location.

    The forward transform rotates by ``angle_rad`` (counter-clockwise in
    (x, y) coordinates) and scales about the image centre, then shifts.
    """
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    # inverse of scale * R(angle) is R(-angle) / scale
    a = np.array([[c, s], [-s, c]]) / scale
    t = np.array([cx + shift_x, cy + shift_y])
    b = np.array([cx, cy]) - a @ t
    return np.array([[a[0, 0], a[0, 1], b[0]], [a[1, 0], a[1, 1], b[1]]])


def warp_images(images: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """Bilinear warp of [N, H, W] images, zero fill, clipped to [0, 1]."""
    out = kernels.affine_warp(np.ascontiguousarray(images, dtype=DTYPE),
                              np.ascontiguousarray(mats, dtype=DTYPE))
    return np.clip(out, 0.0, 1.0)


def augment(data: Dataset, config: AugmentConfig) -> Dataset:
    """Append ``copies_per_image`` randomly warped copies of every image.

    Transform parameters for sample ``i`` come from an RNG substream keyed by
    ``(config.seed, i)``. Output order: originals, then copy 1 of every
    image, then copy 2, and so on.
    """
    if not data.is_image:
        raise ContractError("augment needs image-layout features [N, C, H, W]")
    k = config.copies_per_image
    if k == 0:
        return data
    n, ch, h, w = data.features.shape
    root = SeededRng(config.seed)
    mats = np.empty((k, n, 2, 3))
    lo, hi = config.scale_range
    rot = math.radians(config.max_rotation_deg)
    sh = float(config.max_shift_px)
    for i in range(n):
        r = root.spawn(i)
        draws = r.random((k, 4))
        for j in range(k):
            angle = (2.0 * draws[j, 0] - 1.0) * rot
            scale = lo + (hi - lo) * draws[j, 1]
            dx = (2.0 * draws[j, 2] - 1.0) * sh
            dy = (2.0 * draws[j, 3] - 1.0) * sh
            mats[j, i] = affine_source_matrix(h, w, angle, scale, dx, dy)
    parts = [data.features]
    for j in range(k):
        m = np.repeat(mats[j], ch, axis=0)
        warped = warp_images(data.features.reshape(n * ch, h, w), m)
        parts.append(warped.reshape(n, ch, h, w))
    feats = np.concatenate(parts, axis=0)
    labels = np.tile(data.labels, k + 1)
    return Dataset(feats, labels, data.n_classes)


# -- synthetic sets --------------------------------------------------------

def synth_xor(n: int, noise: float, seed: int) -> Dataset:
    """Four Gaussian clusters at (+-1, +-1); label 1 where the signs differ."""
    if n < 4 or n % 4:
        raise DomainError(f"n must be a positive multiple of 4, got {n}")
    if noise < 0:
        raise DomainError("noise must be non-negative")
    rng = SeededRng(seed)
    centers = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    labels = np.array([0, 0, 1, 1])
    per = n // 4
    x = np.repeat(centers, per, axis=0)
    y = np.repeat(labels, per)
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    order = rng.permutation(n)
    return Dataset(np.ascontiguousarray(x[order]), y[order], 2)


def synth_squares(n: int, seed: int, size: int = 8) -> Dataset:
    """Filled (label 0) vs hollow (label 1) axis-aligned squares on a blank image."""
    if n < 2 or n % 2:
        raise DomainError(f"n must be a positive even number, got {n}")
    rng = SeededRng(seed)
    x = np.zeros((n, 1, size, size))
    y = np.repeat([0, 1], n // 2)
    for i in range(n):
        side = int(rng.generator.integers(3, size - 1))
        top = int(rng.generator.integers(0, size - side + 1))
        left = int(rng.generator.integers(0, size - side + 1))
        x[i, 0, top:top + side, left:left + side] = 1.0
        if y[i] == 1:
            x[i, 0, top + 1:top + side - 1, left + 1:left + side - 1] = 0.0
    order = rng.permutation(n)
    return Dataset(x[order], y[order], 2)


def split(data: Dataset, val_fraction: float, seed: int):
    """Seeded shuffle, then ``ceil(N * (1 - f))`` training rows and the rest."""
    if not 0.0 < val_fraction < 1.0:
        raise DomainError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(data)
    n_train = math.ceil(round(n * (1.0 - val_fraction), 9))
    order = SeededRng(seed).permutation(n)
    tr, va = np.sort(order[:n_train]), np.sort(order[n_train:])
    return data.subset(tr), data.subset(va)


def load_mnist(directory, split_name: str = "train", layout: str = "flat",
               limit: Optional[int] = None) -> Dataset:
    """Load ``train`` or ``t10k`` MNIST from a directory of IDX files (optionally gzipped)."""
    d = Path(directory)
    stem = "train" if split_name == "train" else "t10k"
    paths = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        base = d / f"{stem}-{kind}"
        gz = base.with_name(base.name + ".gz")
        paths.append(base if base.exists() else gz)
    raw = load_idx(*paths)
    if limit is not None:
        raw = RawDataset(raw.images[:limit], raw.labels[:limit])
    return normalize(raw, layout)
