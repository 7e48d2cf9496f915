"""CIFAR binary ingestion, a synthetic prototype task, and augmentation."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, stats

from .errors import ConfigError

IMAGE_SHAPE = (3, 32, 32)
PIXELS = 3 * 32 * 32
RECORD_BYTES = {"c10": 1 + PIXELS, "c100": 2 + PIXELS}
NUM_CLASSES = {"c10": 10, "c100": 100}


@dataclass
class Dataset:
    images: np.ndarray          # (M, 3, 32, 32), normalized
    labels: np.ndarray          # (M,) int64
    num_classes: int
    mean: np.ndarray            # per-channel statistics used for normalization
    std: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.num_classes, self.mean, self.std)


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = images.mean(axis=(0, 2, 3))
    std = images.std(axis=(0, 2, 3))
    return mean, np.where(std > 0, std, 1.0)


def normalize(images: np.ndarray, mean: np.ndarray, std: np.ndarray, dtype=np.float32) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)[None, :, None, None]
    std = np.asarray(std, dtype=np.float64)[None, :, None, None]
    return ((images - mean) / std).astype(dtype)


# -- CIFAR binary format ------------------------------------------------------

def parse_cifar(buf: bytes, variant: str = "c10") -> tuple[np.ndarray, np.ndarray]:
    """Decode raw records into (uint8 images (n,3,32,32), int64 labels).

    CIFAR-100 records carry (coarse, fine) labels; the fine label is returned.
    """
    if variant not in RECORD_BYTES:
        raise ConfigError(f"unknown CIFAR variant {variant!r}")
    size = RECORD_BYTES[variant]
    if len(buf) % size:
        raise ConfigError(f"truncated CIFAR data: {len(buf)} bytes is not a multiple of {size}")
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, size)
    n_lab = size - PIXELS
    labels = rec[:, n_lab - 1].astype(np.int64)
    if labels.size and labels.max() >= NUM_CLASSES[variant]:
        raise ConfigError(f"label {labels.max()} out of range for {variant}")
    images = rec[:, n_lab:].reshape(-1, *IMAGE_SHAPE).copy()
    return images, labels


def serialize_cifar(images: np.ndarray, labels: np.ndarray, variant: str = "c10",
                    coarse: np.ndarray | None = None) -> bytes:
    images = np.asarray(images, dtype=np.uint8).reshape(-1, PIXELS)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    if variant == "c10":
        rec = np.hstack([labels, images])
    elif variant == "c100":
        c = np.zeros_like(labels) if coarse is None else np.asarray(coarse, dtype=np.uint8).reshape(-1, 1)
        rec = np.hstack([c, labels, images])
    else:
        raise ConfigError(f"unknown CIFAR variant {variant!r}")
    return rec.tobytes()


def read_cifar_files(paths, variant: str = "c10") -> tuple[np.ndarray, np.ndarray]:
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    imgs, labs = [], []
    for p in paths:
        with open(p, "rb") as fh:
            x, y = parse_cifar(fh.read(), variant)
        imgs.append(x)
        labs.append(y)
    return np.concatenate(imgs), np.concatenate(labs)


def load_cifar(path, variant: str = "c10", stats=None, limit: int | None = None) -> Dataset:
    """Load CIFAR binary file(s) and normalize per channel.

    Pixels are scaled to [0, 1] first. ``stats`` is a (mean, std) pair from the
    training split; when omitted it is computed from the loaded records.
    """
    raw, labels = read_cifar_files(path, variant)
    if limit is not None:
        raw, labels = raw[:limit], labels[:limit]
    x = raw.astype(np.float64) / 255.0
    mean, std = channel_stats(x) if stats is None else stats
    return Dataset(normalize(x, mean, std), labels, NUM_CLASSES[variant], np.asarray(mean), np.asarray(std))


def cifar_split_files(data_dir: str, variant: str) -> tuple[list[str], list[str]]:
    if variant == "c10":
        train = [os.path.join(data_dir, f"data_batch_{i}.bin") for i in range(1, 6)]
        test = [os.path.join(data_dir, "test_batch.bin")]
    else:
        train, test = [os.path.join(data_dir, "train.bin")], [os.path.join(data_dir, "test.bin")]
    return [p for p in train if os.path.exists(p)] or train, test


# -- synthetic prototype task ---------------------------------------------------

DIFFICULTY_PRESETS = {"easy": 0.995, "mid": 0.97, "hard": 0.85}


def prototype_accuracy(noise_ratio: float, num_classes: int) -> float:
    """Closed-form nearest-prototype accuracy for orthogonal equal-norm prototypes.

    With latent noise std sigma and prototype norm s, the class-k projection is
    s + sigma*e_k and the others sigma*e_j, so accuracy is
    integral phi(u) Phi(u + s/sigma)^(K-1) du.
    """
    if noise_ratio <= 0:
        return 1.0
    snr = 1.0 / noise_ratio
    f = lambda u: stats.norm.pdf(u) * stats.norm.cdf(u + snr) ** (num_classes - 1)
    return float(integrate.quad(f, -np.inf, np.inf)[0])


@lru_cache(maxsize=64)
def difficulty_for_accuracy(target: float, num_classes: int) -> float:
    """Noise ratio sigma/s at which the nearest-prototype accuracy equals ``target``."""
    chance = 1.0 / num_classes
    if not chance < target < 1.0:
        raise ConfigError(f"target accuracy must lie in ({chance}, 1)")
    return float(optimize.brentq(lambda d: prototype_accuracy(d, num_classes) - target, 1e-4, 100.0, xtol=1e-12))


def resolve_difficulty(difficulty, num_classes: int) -> float:
    if isinstance(difficulty, str):
        if difficulty not in DIFFICULTY_PRESETS:
            raise ConfigError(f"difficulty must be a number or one of {sorted(DIFFICULTY_PRESETS)}")
        return difficulty_for_accuracy(DIFFICULTY_PRESETS[difficulty], num_classes)
    d = float(difficulty)
    if d < 0:
        raise ConfigError("difficulty must be >= 0")
    return d


def prototype_basis(seed: int, dims: int) -> np.ndarray:
    """Orthonormal (dims, 3*32*32) basis of colored sinusoidal gratings."""
    rng = np.random.default_rng([seed, 0x5EED])
    yy, xx = np.mgrid[0:32, 0:32] / 32.0
    patterns = []
    for j in range(dims):
        theta = np.pi * j / dims + rng.uniform(0, np.pi / (2 * dims))
        freq = 2 + (j % 3)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        color = rng.normal(size=3)
        patterns.append((color[:, None, None] * wave[None]).reshape(-1))
    q, _ = np.linalg.qr(np.stack(patterns, axis=1))
    return q.T


def synth_raw(seed: int, m: int, num_classes: int, noise_ratio: float, sample_seed: int | None = None):
    """Un-normalized synthetic images, labels and the prototype matrix.

    Prototypes depend only on ``seed``; ``sample_seed`` selects the draw so
    train and test splits can share prototypes.
    """
    dims = max(num_classes, 8)
    basis = prototype_basis(seed, dims)
    scale = np.sqrt(PIXELS)  # per-pixel rms of a prototype is 1
    rng = np.random.default_rng([seed, 1 if sample_seed is None else 2 + sample_seed])
    labels = rng.integers(0, num_classes, size=m)
    latent = noise_ratio * scale * rng.standard_normal((m, dims))
    latent[np.arange(m), labels] += scale
    images = (latent @ basis).reshape(m, *IMAGE_SHAPE)
    prototypes = scale * basis[:num_classes]
    return images, labels.astype(np.int64), prototypes


def synth_task(seed: int, m: int, num_classes: int = 4, difficulty="mid", stats=None,
               sample_seed: int | None = None) -> Dataset:
    """K-class prototype task rendered as 3x32x32 images.

    ``difficulty`` is the latent noise-to-signal ratio, or a preset name
    ("easy", "mid", "hard") resolved to the ratio giving nearest-prototype
    accuracy 99.5%, 97% and 85%. Difficulty 0 is noise free.
    """
    ratio = resolve_difficulty(difficulty, num_classes)
    images, labels, _ = synth_raw(seed, m, num_classes, ratio, sample_seed)
    mean, std = channel_stats(images) if stats is None else stats
    return Dataset(normalize(images, mean, std), labels, num_classes, np.asarray(mean), np.asarray(std))


def nearest_prototype_accuracy(images: np.ndarray, labels: np.ndarray, prototypes: np.ndarray) -> float:
    flat = images.reshape(len(images), -1)
    d2 = ((flat[:, None, :] - prototypes[None]) ** 2).sum(axis=-1)
    return float(np.mean(d2.argmin(axis=1) == labels))


# -- augmentation ---------------------------------------------------------------

def augment_batch(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random crop after zero padding plus random horizontal flip; shape preserved."""
    b, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, size=b)
    dx = rng.integers(0, 2 * pad + 1, size=b)
    flip = rng.random(b) < 0.5
    out = np.empty_like(images)
    for i in range(b):
        crop = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out
