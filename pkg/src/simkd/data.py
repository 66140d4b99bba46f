"""Synthetic image datasets, the SKDD binary format, normalization, augmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CorruptionError, InputError
from .numeric import DTYPE, Rng, fnv1a64

DATASET_MAGIC = b"SKDD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHIHHHH")


@dataclass
class Dataset:
    """Images ``x`` as (N, C, H, W) float64 and integer labels ``y``."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise InputError(f"{len(self.x)} images but {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise InputError("labels out of range")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.num_classes)

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x.mean(axis=(0, 2, 3)), self.x.std(axis=(0, 2, 3))


def normalize(ds: Dataset, mean, std) -> Dataset:
    mean = np.asarray(mean, dtype=DTYPE)[None, :, None, None]
    std = np.asarray(std, dtype=DTYPE)[None, :, None, None]
    return Dataset((ds.x - mean) / std, ds.y, ds.num_classes)


def _blur(img: np.ndarray) -> np.ndarray:
    """Separable [1, 2, 1] / 4 blur with wrap-around over the last two axes."""
    for axis in (-1, -2):
        img = 0.25 * np.roll(img, 1, axis) + 0.5 * img + 0.25 * np.roll(img, -1, axis)
    return img


def _standardize(a: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, a.ndim))
    return (a - a.mean(axis=axes, keepdims=True)) / a.std(axis=axes, keepdims=True)


def gen_synthetic(
    num_classes: int = 10,
    per_class: int = 100,
    height: int = 8,
    width: int = 8,
    channels: int = 3,
    difficulty: float = 0.5,
    seed: int = 0,
    test_per_class: int | None = None,
    max_shift: int = 1,
    mirror: bool = True,
) -> tuple[Dataset, Dataset]:
    """Generate a balanced (train, test) pair of prototype-plus-noise images.

    Each class owns a smoothed random prototype. A sample is its class
    prototype circularly shifted by up to ``max_shift`` pixels (and, with
    ``mirror``, flipped left-right with probability 1/2), mixed with smoothed
    noise in proportion ``difficulty : 1 - difficulty``, and quantized to 8
    bits. Small ``difficulty`` means noise dominates. Shifts and mirroring
    make the class distributions invariant to the flip/crop augmentation.
    """
    if num_classes < 2 or num_classes > 255:
        raise ConfigurationError("num_classes must lie in [2, 255]")
    if min(per_class, height, width, channels) < 1:
        raise ConfigurationError("sizes must be positive")
    if not 0.0 < difficulty <= 1.0:
        raise ConfigurationError("difficulty must lie in (0, 1]")
    test_per_class = per_class if test_per_class is None else test_per_class
    rng = Rng(seed, ("synthetic",))
    protos = _standardize(_blur(rng.child("prototypes").normal((num_classes, channels, height, width))))

    def sample(split: str, n: int) -> Dataset:
        r = rng.child(split)
        y = np.repeat(np.arange(num_classes), n)
        shifts = r.integers(-max_shift, max_shift + 1, size=(len(y), 2))
        flips = r.random(len(y)) < (0.5 if mirror else 0.0)
        noise = _standardize(_blur(r.normal((len(y), channels, height, width))))
        x = np.empty_like(noise)
        for i, (label, (dy, dx)) in enumerate(zip(y, shifts)):
            x[i] = np.roll(protos[label], (dy, dx), axis=(1, 2))
            if flips[i]:
                x[i] = x[i][..., ::-1]
        img = 0.5 + 0.2 * (difficulty * x + (1.0 - difficulty) * noise)
        q = np.clip(np.rint(img * 255.0), 0, 255)
        order = r.permutation(len(y))
        return Dataset(q[order] / 255.0, y[order], num_classes)

    return sample("train", per_class), sample("test", test_per_class)


def dataset_to_bytes(ds: Dataset) -> bytes:
    n, c, h, w = ds.x.shape
    pixels = np.rint(ds.x * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise InputError("pixel values must lie in [0, 1] to be stored as u8")
    body = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, h, w, c, ds.num_classes)
    body += pixels.astype(np.uint8).tobytes() + ds.y.astype(np.uint8).tobytes()
    return body + struct.pack("<Q", fnv1a64(body))


def dataset_from_bytes(blob: bytes) -> Dataset:
    if len(blob) < _HEADER.size + 8:
        raise CorruptionError("dataset file is truncated")
    body, (checksum,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if fnv1a64(body) != checksum:
        raise CorruptionError("dataset checksum mismatch")
    magic, version, n, h, w, c, k = _HEADER.unpack_from(body)
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise CorruptionError(f"not a dataset file (magic {magic!r}, version {version})")
    npix = n * c * h * w
    if len(body) != _HEADER.size + npix + n:
        raise CorruptionError("dataset payload length does not match header")
    off = _HEADER.size
    pixels = np.frombuffer(body, dtype=np.uint8, count=npix, offset=off).reshape(n, c, h, w)
    labels = np.frombuffer(body, dtype=np.uint8, count=n, offset=off + npix)
    if n and labels.max() >= k:
        raise CorruptionError("label exceeds class count")
    return Dataset(pixels.astype(DTYPE) / 255.0, labels.astype(np.int64), k)


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


def hflip(batch: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mirror the samples selected by boolean ``mask`` left to right."""
    out = batch.copy()
    out[mask] = out[mask][..., ::-1]
    return out


def pad_crop(batch: np.ndarray, offsets: np.ndarray, pad: int) -> np.ndarray:
    """Zero-pad by ``pad`` and crop back, sample i starting at ``offsets[i]``."""
    if pad == 0:
        return batch
    n, c, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(batch)
    for i, (oy, ox) in enumerate(offsets):
        out[i] = padded[i, :, oy:oy + h, ox:ox + w]
    return out


def augment(batch: np.ndarray, rng: Rng, flip_prob: float = 0.5, pad: int = 1, return_params: bool = False):
    """Random horizontal flip then pad-and-crop, drawn per sample."""
    n, _, h, _ = batch.shape
    if pad > h:
        raise ConfigurationError(f"pad {pad} exceeds image height {h}")
    mask = rng.random(n) < flip_prob
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    out = pad_crop(hflip(batch, mask), offsets, pad)
    if return_params:
        return out, mask, offsets
    return out
