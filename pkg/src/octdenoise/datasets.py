"""Images, labelled OCT-style datasets, noise corruption and batching.

Images are 2-D float64 arrays with values in [0, 1]. Every function that
returns an image clips to that range.

Noise model: ``corrupt`` adds zero-mean Gaussian noise with *standard
deviation* ``sigma`` (default 0.1) on the [0, 1] scale, then clips. Read as a
standard deviation, 0.1 gives a corrupted PSNR of about 20 dB; read as a
variance it would give about 10 dB.
"""

from __future__ import annotations

import enum
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from PIL import Image as PILImage

from .tensor import Tensor

DEFAULT_SIGMA = 0.1
SPLITS = ("train", "val", "test")
DEFAULT_TEXTURE = 0.015
BLUR_RANGE = (0.0, 1.2)
GAIN_RANGE = (0.85, 1.15)
IMAGE_SUFFIXES = (".png", ".pgm", ".jpeg", ".jpg")


class Label(enum.IntEnum):
    NORMAL = 0
    DRUSEN = 1
    DME = 2
    CNV = 3


class DatasetError(ValueError):
    pass


@dataclass
class LabeledSample:
    image: np.ndarray
    label: Label
    source_path: Optional[str] = None


@dataclass
class LabeledDataset:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __post_init__(self):
        seen: dict[str, str] = {}
        for name in SPLITS:
            for s in getattr(self, name):
                if s.source_path is None:
                    continue
                if s.source_path in seen:
                    raise DatasetError(f"{s.source_path} appears in both {seen[s.source_path]} and {name}")
                seen[s.source_path] = name

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise KeyError(name)
        return getattr(self, name)

    @property
    def sizes(self) -> dict:
        return {name: len(getattr(self, name)) for name in SPLITS}

    def histogram(self, name: str) -> dict:
        counts = Counter(s.label for s in self.split(name))
        return {label: counts.get(label, 0) for label in Label}


# ---------------------------------------------------------------- image I/O


def load_image(path: Union[str, os.PathLike]) -> np.ndarray:
    """Read an 8-bit grayscale PNG/PGM (RGB is averaged over channels) into [0, 1]."""
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    if mode in ("L", "LA"):
        arr = arr[..., 0] if arr.ndim == 3 else arr
    elif mode in ("RGB", "RGBA"):
        arr = arr[..., :3].astype(np.float64).mean(axis=2)
    else:
        raise DatasetError(f"{path}: unsupported image mode {mode!r} (need 8-bit grayscale or RGB)")
    if arr.dtype != np.uint8 and mode not in ("RGB", "RGBA"):
        raise DatasetError(f"{path}: unsupported bit depth {arr.dtype}")
    return np.asarray(arr, dtype=np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path: Union[str, os.PathLike], image: np.ndarray) -> None:
    """Write an image as 8-bit grayscale; the format follows the suffix (.png or .pgm)."""
    path = Path(path)
    fmt = {".png": "PNG", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise DatasetError(f"unsupported output format {path.suffix!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(image), mode="L").save(path, format=fmt)


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid, i.e. what a save/load round trip yields."""
    return to_uint8(image).astype(np.float64) / 255.0


# ---------------------------------------------------------------- noise, resizing


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def corrupt(image: np.ndarray, sigma: float = DEFAULT_SIGMA, seed: int = 0) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise per pixel and clip to [0, 1]."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    image = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return image.copy()
    noise = np.random.default_rng(seed).standard_normal(image.shape)
    return np.clip(image + sigma * noise, 0.0, 1.0)


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_to(image: np.ndarray, size) -> np.ndarray:
    """Bilinear resize to ``size`` x ``size`` (or an ``(h, w)`` pair)."""
    h_out, w_out = (size, size) if np.isscalar(size) else size
    if h_out < 1 or w_out < 1:
        raise ValueError(f"size must be positive, got {size}")
    image = np.asarray(image, dtype=np.float64)
    if image.shape == (h_out, w_out):
        return image.copy()
    r0, r1, fr = _bilinear_axis(image.shape[0], h_out)
    c0, c1, fc = _bilinear_axis(image.shape[1], w_out)
    rows = image[r0] * (1 - fr)[:, None] + image[r1] * fr[:, None]
    out = rows[:, c0] * (1 - fc) + rows[:, c1] * fc
    return np.clip(out, 0.0, 1.0)


def smooth_step(size: int = 64, low: float = 0.2, high: float = 0.8, width: float = 2.0) -> np.ndarray:
    """Two flat regions joined by a tanh edge down the middle column."""
    x = np.arange(size) - (size - 1) / 2
    row = low + (high - low) * 0.5 * (1 + np.tanh(x / width))
    return np.tile(row, (size, 1))


# ---------------------------------------------------------------- ingestion


def _list_class_dir(d: Path) -> list:
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def _scan_split(split_dir: Path) -> list:
    found = []
    for child in sorted(split_dir.iterdir()):
        if child.name.startswith("."):
            continue
        if not child.is_dir():
            continue
        if child.name not in Label.__members__:
            raise DatasetError(f"unknown class directory {child}")
    for label in Label:
        class_dir = split_dir / label.name
        if not class_dir.is_dir():
            raise DatasetError(f"missing class directory {class_dir}")
        found.extend((p, label) for p in _list_class_dir(class_dir))
    return sorted(found, key=lambda item: item[0].as_posix())


def ingest_directory(root, size: Optional[int] = None, val_count: int = 0, test_count: int = 0,
                     carve_seed: int = 0) -> LabeledDataset:
    """Load ``<root>/{train,val,test}/{NORMAL,DRUSEN,DME,CNV}/*``.

    A missing ``val`` or ``test`` directory is carved out of ``train`` by
    taking ``val_count`` / ``test_count`` entries of a seeded permutation.
    With ``size`` every image is resized to ``size`` x ``size`` on load.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    entries = {name: _scan_split(root / name) for name in SPLITS if (root / name).is_dir()}
    if "train" not in entries:
        raise DatasetError(f"{root} has no train/ directory")
    carve = [(name, n) for name, n in (("val", val_count), ("test", test_count)) if name not in entries]
    if any(n for _, n in carve):
        pool = entries["train"]
        if sum(n for _, n in carve) > len(pool):
            raise DatasetError(f"cannot carve {sum(n for _, n in carve)} images from a train split of {len(pool)}")
        order = np.random.default_rng(carve_seed).permutation(len(pool))
        taken = 0
        for name, n in carve:
            picked = sorted(order[taken : taken + n])
            entries[name] = [pool[i] for i in picked]
            taken += n
        keep = set(order[taken:].tolist())
        entries["train"] = [e for i, e in enumerate(pool) if i in keep]
    for name in SPLITS:
        if not entries.get(name):
            raise DatasetError(f"split {name!r} under {root} is empty")

    def load(path: Path, label: Label) -> LabeledSample:
        img = load_image(path)
        if size is not None:
            img = resize_to(img, size)
        return LabeledSample(img, label, path.relative_to(root).as_posix())

    return LabeledDataset(**{name: [load(p, lab) for p, lab in entries[name]] for name in SPLITS})


def write_dataset(dataset: LabeledDataset, root, suffix: str = ".png") -> list:
    """Materialise a dataset in the standard folder layout; returns written paths."""
    root = Path(root)
    written = []
    for name in SPLITS:
        for i, s in enumerate(dataset.split(name)):
            rel = s.source_path or f"{name}/{s.label.name}/{s.label.name}-{i:05d}{suffix}"
            path = root / rel
            save_image(path, s.image)
            written.append(path)
    return written


# ---------------------------------------------------------------- synthetic data


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img
    r = max(1, int(np.ceil(3 * sigma)))
    k = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(img, r, mode="edge")
    rows = np.apply_along_axis(np.convolve, 1, pad, k, mode="valid")
    return np.apply_along_axis(np.convolve, 0, rows, k, mode="valid")


def _synthetic_image(label: Label, size: int, rng: np.random.Generator, texture_sd: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    s = size / 32.0
    img = 0.12 + 0.03 * np.sin(2 * np.pi * (xx / size * rng.uniform(0.5, 1.5) + rng.uniform()))

    # retinal layers: gently curved bright bands
    phase = rng.uniform(0, 2 * np.pi)
    tilt = rng.uniform(-0.08, 0.08)
    curve = 1.2 * s * np.sin(2 * np.pi * xx / size * rng.uniform(0.4, 0.9) + phase) + tilt * (xx - size / 2)
    top = size * rng.uniform(0.22, 0.30) + curve
    bottom = size * rng.uniform(0.66, 0.74) + curve
    inner = (top + bottom) / 2 + rng.uniform(-1, 1) * s

    if label == Label.DRUSEN:
        # localized bumps lifting the bottom layer
        for _ in range(rng.integers(2, 4)):
            cx = rng.uniform(0.15, 0.85) * size
            width = rng.uniform(1.6, 2.6) * s
            bottom = bottom - rng.uniform(3.5, 5.5) * s * np.exp(-(((xx - cx) / width) ** 2))

    retina = (yy > top) & (yy < bottom)
    img = np.where(retina, 0.30, img)
    for center, thick, level in ((top, 1.3, 0.75), (inner, 1.0, 0.55), (bottom, 1.6, 0.85)):
        band = np.exp(-(((yy - center) / (thick * s)) ** 2))
        img = img + (level - 0.3) * band * rng.uniform(0.85, 1.0)

    if label == Label.DME:
        # dark fluid pockets inside the retina
        for _ in range(rng.integers(1, 3)):
            cx = rng.uniform(0.25, 0.75) * size
            cy = size * rng.uniform(0.42, 0.55)
            rx, ry = rng.uniform(3.0, 5.5) * s, rng.uniform(2.0, 3.2) * s
            void = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 < 1
            img = np.where(void, 0.05, img)
    elif label == Label.CNV:
        # bright irregular blob breaking through the bottom layer
        cx = rng.uniform(0.3, 0.7) * size
        cy = float(np.interp(cx, xx[0], bottom[0])) - 2.0 * s
        blob = np.zeros_like(img)
        for _ in range(4):
            dx, dy = rng.normal(0, 1.8 * s, 2)
            r = rng.uniform(1.6, 2.8) * s
            blob = np.maximum(blob, np.exp(-(((xx - cx - dx) ** 2 + (yy - cy - dy) ** 2) / r**2)))
        img = img + 0.55 * blob

    # acquisition varies in focus and gain from scan to scan
    img = _gaussian_blur(img, rng.uniform(*BLUR_RANGE) * s) * rng.uniform(*GAIN_RANGE)
    texture = rng.normal(0, texture_sd, (size, size))
    return quantize(np.clip(img + texture, 0.0, 1.0))


def _split_counts(n: int) -> tuple:
    held = max(1, n // 10) if n >= 3 else 0
    return n - 2 * held, held, held


def make_synthetic(n_per_class: int, size: int = 32, seed: int = 0, texture_sd: float = DEFAULT_TEXTURE) -> LabeledDataset:
    """Four separable layered-texture classes standing in for OCT scans.

    NORMAL: plain bright bands. DRUSEN: bumps lifting the bottom band. DME:
    dark elliptical voids. CNV: a bright irregular blob. Each class is split
    80/10/10; pixels lie on the 8-bit grid so the set survives a PNG round
    trip unchanged.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    n_train, n_val, _ = _split_counts(n_per_class)
    splits: dict[str, list] = {name: [] for name in SPLITS}
    for label in Label:
        for i in range(n_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, int(label), i]))
            img = _synthetic_image(label, size, rng, texture_sd)
            name = "train" if i < n_train else "val" if i < n_train + n_val else "test"
            rel = f"{name}/{label.name}/{label.name}-{i:05d}.png"
            splits[name].append(LabeledSample(img, label, rel))
    for name in SPLITS:
        splits[name].sort(key=lambda s: s.source_path)
    return LabeledDataset(**splits)


# ---------------------------------------------------------------- batching


def stack_images(samples: Sequence[LabeledSample], dtype=np.float32) -> np.ndarray:
    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise DatasetError(f"images differ in size: {sorted(shapes)}")
    return np.stack([s.image for s in samples])[:, None].astype(dtype)


def batch_iter(split: Sequence[LabeledSample], batch_size: int, shuffle_seed: Optional[int] = None,
               dtype=np.float32, with_indices: bool = False) -> Iterator[tuple]:
    """Yield ``(Tensor[N,1,S,S], labels)`` batches covering ``split`` once.

    ``shuffle_seed=None`` keeps dataset order. The final partial batch is
    emitted. ``with_indices`` appends the split indices of each batch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if not split:
        raise DatasetError("cannot batch an empty split")
    n = len(split)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        chunk = [split[i] for i in idx]
        x = Tensor(stack_images(chunk, dtype))
        labels = np.array([int(s.label) for s in chunk], dtype=np.int64)
        yield (x, labels, idx) if with_indices else (x, labels)
