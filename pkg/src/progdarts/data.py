"""Datasets: CIFAR-10 binary batches, a synthetic blob generator, splits."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
CIFAR_CLASSES = 10


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64
    labels: np.ndarray  # (N,) int64
    num_classes: int
    name: str
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"{self.name}: images must be NCHW, got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{self.name}: {len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"{self.name}: labels outside [0, {self.num_classes})")
        if not np.all(np.isfinite(self.images)):
            raise DataError(f"{self.name}: non-finite pixel values")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray, name: str | None = None) -> "Dataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx], name=name or self.name)

    def standardized(self, mean: np.ndarray | None = None, std: np.ndarray | None = None) -> "Dataset":
        """Per-channel standardization; statistics default to this dataset's own."""
        if mean is None:
            mean = self.images.mean(axis=(0, 2, 3), dtype=np.float64)
        if std is None:
            std = self.images.std(axis=(0, 2, 3), dtype=np.float64)
        std = np.where(std > 0, std, 1.0)
        imgs = (self.images - mean[None, :, None, None]) / std[None, :, None, None]
        return replace(self, images=imgs, mean=np.asarray(mean), std=np.asarray(std))


# ---------------------------------------------------------------------------
# CIFAR-10 binary format
# ---------------------------------------------------------------------------


def _parse_cifar_bytes(raw: bytes, source: str, expected: int | None = None):
    if len(raw) == 0:
        raise DataError(f"{source}: empty file")
    if len(raw) % CIFAR_RECORD:
        whole = len(raw) // CIFAR_RECORD
        raise DataError(
            f"{source}: truncated record at byte offset {whole * CIFAR_RECORD} "
            f"({len(raw)} bytes is not a multiple of {CIFAR_RECORD})")
    n = len(raw) // CIFAR_RECORD
    if expected is not None and n != expected:
        raise DataError(f"{source}: expected {expected} records, found {n}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = arr[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"{source}: label {labels[i]} > 9 in record {i} at byte offset {i * CIFAR_RECORD}")
    pixels = arr[:, 1:].reshape(n, 3, CIFAR_SIDE, CIFAR_SIDE)
    return pixels, labels


def load_cifar10_binary(path, expected_records: int | None = None,
                        standardize: bool = True) -> Dataset:
    """Load one binary batch file, a list of files, or a directory of them.

    A directory loads ``data_batch_*.bin`` (or ``test_batch.bin`` if that is
    all there is). Pixels are scaled to [0, 1] and, by default, standardized
    per channel with the loaded set's own statistics.
    """
    if isinstance(path, (list, tuple)):
        files = [Path(p) for p in path]
    else:
        p = Path(path)
        if p.is_dir():
            files = sorted(p.glob("data_batch_*.bin")) or sorted(p.glob("test_batch.bin"))
            if not files:
                raise DataError(f"{p}: no CIFAR-10 .bin batch files found")
        else:
            files = [p]
    pix, lab = [], []
    for f in files:
        try:
            raw = f.read_bytes()
        except OSError as exc:
            raise DataError(f"{f}: {exc}") from None
        x, y = _parse_cifar_bytes(raw, str(f))
        pix.append(x)
        lab.append(y)
    pixels = np.concatenate(pix)
    labels = np.concatenate(lab)
    if expected_records is not None and len(labels) != expected_records:
        raise DataError(f"{path}: expected {expected_records} records, found {len(labels)}")
    ds = Dataset(pixels.astype(np.float64) / 255.0, labels, CIFAR_CLASSES, "cifar10")
    return ds.standardized() if standardize else ds


def write_cifar10_binary(path, pixels: np.ndarray, labels: Sequence[int]) -> None:
    """Write uint8 (N, 3, 32, 32) pixels and labels in the binary batch layout."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    recs = np.concatenate([labels[:, None], pixels.reshape(len(labels), -1)], axis=1)
    Path(path).write_bytes(recs.tobytes())


# ---------------------------------------------------------------------------
# synthetic blobs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    n: int = 512
    classes: int = 4
    side: int = 8
    seed: int = 0
    channels: int = 3
    noise: float = 0.3
    amplitude: float = 1.0


def _class_layout(classes: int, side: int, channels: int, seed: int):
    """Per-class patch centre and channel profile, fixed by the generator seed."""
    rng = np.random.default_rng([seed, 0xB10B])
    grid = max(2, int(np.ceil(np.sqrt(classes))))
    cells = [(r, c) for r in range(grid) for c in range(grid)][:classes]
    centres = [((r + 0.5) * side / grid - 0.5, (c + 0.5) * side / grid - 0.5) for r, c in cells]
    colours = []
    for k in range(classes):
        # distinct colour signatures keep classes visible after global pooling
        v = np.full(channels, 0.25)
        v[k % channels] = 1.0
        if k >= channels:
            v[(k + 1) % channels] = 1.0
        colours.append(v * (1.0 + 0.1 * rng.standard_normal(channels)))
    return centres, colours


def synth_dataset_generate(spec: SynthSpec) -> Dataset:
    """Class-conditional Gaussian-blob images.

    Class ``k`` draws a bright blob near a class-specific location (jittered by
    up to one pixel) with a class-specific colour profile, plus white noise.
    Labels are balanced to within one and shuffled with the seed.
    """
    if spec.side < 4:
        raise DataError(f"synthetic side must be >= 4, got {spec.side}")
    if spec.n < spec.classes:
        raise DataError(f"synthetic n={spec.n} is smaller than classes={spec.classes}")
    if spec.classes < 2:
        raise DataError("synthetic data needs at least 2 classes")
    rng = np.random.default_rng(spec.seed)
    labels = np.arange(spec.n) % spec.classes
    rng.shuffle(labels)
    centres, colours = _class_layout(spec.classes, spec.side, spec.channels, spec.seed)
    yy, xx = np.mgrid[0:spec.side, 0:spec.side].astype(np.float64)
    sigma = max(1.0, spec.side / 8)
    imgs = np.empty((spec.n, spec.channels, spec.side, spec.side))
    jitter = rng.integers(-1, 2, size=(spec.n, 2))
    noise = rng.standard_normal(imgs.shape) * spec.noise
    for i, k in enumerate(labels):
        cy, cx = centres[k]
        cy, cx = cy + jitter[i, 0], cx + jitter[i, 1]
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        imgs[i] = spec.amplitude * colours[k][:, None, None] * blob[None]
    imgs += noise
    return Dataset(imgs, labels.astype(np.int64), spec.classes, f"synth-{spec.side}x{spec.side}")


# ---------------------------------------------------------------------------
# splits and batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise DataError(f"split fraction must lie in (0, 1), got {self.fraction}")


def split_indices(n: int, split: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(split.seed).permutation(n)
    cut = int(round(n * split.fraction))
    if cut == 0 or cut == n:
        raise DataError(f"split of {n} samples at fraction {split.fraction} leaves an empty side")
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def split_dataset(ds: Dataset, split: SplitSpec) -> tuple[Dataset, Dataset]:
    a, b = split_indices(len(ds), split)
    return ds.subset(a, ds.name + ":train"), ds.subset(b, ds.name + ":val")


def random_flip(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Horizontal flip of a random half of the batch."""
    flip = rng.random(len(images)) < 0.5
    out = images.copy()
    out[flip] = out[flip, :, :, ::-1]
    return out


def iterate_batches(ds: Dataset, batch_size: int, seed,
                    augment: Optional[Callable] = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle; the trailing partial batch is dropped.

    ``augment(images, rng)`` is applied per batch when given (off by default).
    """
    if batch_size < 1 or batch_size > len(ds):
        raise DataError(f"batch size {batch_size} incompatible with {len(ds)} samples")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    for b in range(len(ds) // batch_size):
        idx = perm[b * batch_size:(b + 1) * batch_size]
        x = ds.images[idx]
        yield (augment(x, rng) if augment is not None else x), ds.labels[idx]


def split_and_batch(ds: Dataset, split: SplitSpec, batch_size: int, epoch_seed: int):
    """Paired (train batch, val batch) iterator over a seeded split of ``ds``."""
    train, val = split_dataset(ds, split)
    return paired_batches(train, val, batch_size, epoch_seed)


def paired_batches(train: Dataset, val: Dataset, batch_size: int, epoch_seed: int):
    if batch_size > min(len(train), len(val)):
        raise DataError(
            f"batch size {batch_size} exceeds split sizes ({len(train)}, {len(val)})")
    ss = np.random.SeedSequence([epoch_seed, 0x5EED])
    s_train, s_val = ss.spawn(2)
    return zip(iterate_batches(train, batch_size, s_train), iterate_batches(val, batch_size, s_val))
