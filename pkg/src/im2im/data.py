"""Dataset ingestion, the preprocessing chain and synthetic desk-scale datasets.

Images travel through the pipeline as (C, H, W) float32 arrays in [-1, 1].
Paired datasets are directories of side-by-side PNGs (input left, target
right) under train/ and val/; unpaired datasets use trainA/, trainB/, valA/,
valB/ subdirectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image

from .rng import RngStream

LAYOUTS = ("side_by_side", "two_dirs")


class DatasetError(ValueError):
    """Unreadable, malformed or inconsistent dataset contents."""


# -- pixel conversion -----------------------------------------------------------


def normalize(pixels: np.ndarray) -> np.ndarray:
    """Map integer pixel values 0..255 onto [-1, 1] via v/127.5 - 1."""
    arr = np.asarray(pixels)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError(
            f"pixel values outside 0..255 (got range {arr.min()}..{arr.max()})"
        )
    return arr.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def denormalize(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats back to uint8, clipping and rounding."""
    arr = (np.asarray(values, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Decode an 8-bit RGB PNG into a (3, H, W) float32 array in [-1, 1]."""
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"))
    except Exception as exc:
        raise DatasetError(f"cannot decode image file {path}: {exc}") from exc
    return normalize(rgb).transpose(2, 0, 1)


def write_image(path, chw: np.ndarray) -> None:
    """Encode a (3, H, W) array in [-1, 1] as an 8-bit RGB PNG."""
    Image.fromarray(denormalize(chw).transpose(1, 2, 0)).save(path, format="PNG")


def write_image_u8(path, hwc_u8: np.ndarray) -> None:
    Image.fromarray(hwc_u8).save(path, format="PNG")


# -- domain types -----------------------------------------------------------------


@dataclass
class ImageSet:
    """Normalized images from one domain, optionally paired with the other."""

    images: list
    domain: str  # "A" | "B"
    pairing: Optional[list] = None
    split: str = "train"

    def __post_init__(self):
        for img in self.images:
            if img.ndim != 3:
                raise DatasetError(f"image rank {img.ndim}, expected (C, H, W)")
            if img.size and (img.min() < -1.0 or img.max() > 1.0):
                raise DatasetError("image pixels outside [-1, 1]")
        if self.pairing is not None:
            if sorted(self.pairing) != list(range(len(self.images))):
                raise DatasetError("pairing must be a bijection over the image indices")

    def __len__(self):
        return len(self.images)


@dataclass(frozen=True)
class AugmentConfig:
    """Which augmentations run, and the jitter upsize extent."""

    flip: bool = True
    jitter: bool = True
    jitter_upsize: int = 0  # 0 picks the default for the image extent


def default_jitter_upsize(extent: int) -> int:
    """286 for 256-pixel images; the same ~12% growth for other extents."""
    return extent + max(1, round(extent * 30 / 256))


# -- loading ------------------------------------------------------------------------


def _png_files(directory: Path) -> list:
    if not directory.is_dir():
        raise DatasetError(f"dataset directory not found: {directory}")
    files = sorted(directory.glob("*.png"))
    if not files:
        raise DatasetError(f"no PNG files in {directory}")
    return files


def load_dataset(path, layout: str, split: str = "train"):
    """Load one split as (domain A ImageSet, domain B ImageSet).

    side_by_side slices each even-width image into (input, target) halves and
    records the identity pairing; two_dirs loads unpaired domains of possibly
    different sizes.
    """
    path = Path(path)
    if layout not in LAYOUTS:
        raise DatasetError(f"unknown dataset layout {layout!r}; expected one of {LAYOUTS}")
    if layout == "side_by_side":
        a_images, b_images = [], []
        for file in _png_files(path / split):
            img = read_image(file)
            width = img.shape[2]
            if width % 2:
                raise DatasetError(f"odd-width side-by-side image: {file} (W={width})")
            half = width // 2
            a_images.append(np.ascontiguousarray(img[:, :, :half]))
            b_images.append(np.ascontiguousarray(img[:, :, half:]))
        pairing = list(range(len(a_images)))
        return (
            ImageSet(a_images, "A", pairing=pairing, split=split),
            ImageSet(b_images, "B", pairing=list(pairing), split=split),
        )
    set_a = ImageSet([read_image(f) for f in _png_files(path / f"{split}A")], "A", split=split)
    set_b = ImageSet([read_image(f) for f in _png_files(path / f"{split}B")], "B", split=split)
    return set_a, set_b


# -- augmentation ---------------------------------------------------------------------


def flip_decision(draw: int) -> bool:
    """Flip when the draw from [0, 100] is strictly greater than 50."""
    return draw > 50


def random_flip(img: np.ndarray, rng: RngStream) -> np.ndarray:
    if flip_decision(rng.randint_inclusive(0, 100)):
        return img[:, :, ::-1].copy()
    return img


def nearest_resize(img: np.ndarray, extent: int) -> np.ndarray:
    """Nearest-neighbor resize of a square (C, S, S) image to (C, extent, extent)."""
    src = img.shape[1]
    idx = (np.arange(extent) * src) // extent
    return img[:, idx, :][:, :, idx]


def random_jitter(img: np.ndarray, cfg: AugmentConfig, rng: RngStream) -> np.ndarray:
    """Upsize by nearest neighbor, then crop back to the original extent."""
    c, h, w = img.shape
    if h != w:
        raise DatasetError(f"jitter expects square images, got {h}x{w}")
    upsize = cfg.jitter_upsize or default_jitter_upsize(h)
    if upsize < h:
        raise DatasetError(f"jitter_upsize {upsize} below image extent {h}")
    up = nearest_resize(img, upsize)
    oy = rng.randint_inclusive(0, upsize - h)
    ox = rng.randint_inclusive(0, upsize - w)
    return np.ascontiguousarray(up[:, oy : oy + h, ox : ox + w])


def apply_augment(img: np.ndarray, cfg: Optional[AugmentConfig], rng: Optional[RngStream]):
    if cfg is None:
        return img
    if rng is None:
        raise ValueError("augmentation requires an RngStream")
    if cfg.flip:
        img = random_flip(img, rng)
    if cfg.jitter:
        img = random_jitter(img, cfg, rng)
    return img


# -- batching -------------------------------------------------------------------------


def batch_iterator(
    imageset: ImageSet,
    batch_size: int,
    augment: Optional[AugmentConfig] = None,
    rng: Optional[RngStream] = None,
) -> Iterator[np.ndarray]:
    """One epoch of batches in a seed-determined shuffle; the short tail included."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(imageset)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idxs = order[start : start + batch_size]
        yield np.stack([apply_augment(imageset.images[i], augment, rng) for i in idxs])


def paired_batch_iterator(
    set_a: ImageSet,
    set_b: ImageSet,
    batch_size: int,
    augment: Optional[AugmentConfig] = None,
    rng: Optional[RngStream] = None,
) -> Iterator[tuple]:
    """Aligned (input, target) batches; both halves share augmentation draws."""
    if set_a.pairing is None or len(set_a) != len(set_b):
        raise DatasetError("paired iteration requires equal-length sets with a pairing")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(set_a)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idxs = order[start : start + batch_size]
        a_batch, b_batch = [], []
        for i in idxs:
            j = set_a.pairing[i]
            if augment is not None and rng is not None:
                snap = rng.get_state()
                a_batch.append(apply_augment(set_a.images[i], augment, rng))
                rng.set_state(snap)
                b_batch.append(apply_augment(set_b.images[j], augment, rng))
            else:
                a_batch.append(set_a.images[i])
                b_batch.append(set_b.images[j])
        yield np.stack(a_batch), np.stack(b_batch)


# -- synthetic datasets -----------------------------------------------------------------

_BG = (30, 30, 34)
_PALETTE = (
    (200, 60, 60),
    (60, 180, 75),
    (65, 90, 200),
    (210, 190, 60),
    (70, 190, 190),
    (190, 70, 190),
)
_RENDER_BG = (236, 233, 222)
_RENDER = {
    _BG: _RENDER_BG,
    (200, 60, 60): (150, 75, 60),
    (60, 180, 75): (96, 128, 74),
    (65, 90, 200): (120, 130, 168),
    (210, 190, 60): (188, 164, 96),
    (70, 190, 190): (104, 148, 150),
    (190, 70, 190): (142, 96, 140),
}


def render_label_map(label_hwc_u8: np.ndarray) -> np.ndarray:
    """Deterministic rendering of a label map: color fill plus darkened borders.

    A pure function of the label image, so re-rendering a stored input
    reproduces the stored target exactly.
    """
    h, w, _ = label_hwc_u8.shape
    out = np.zeros_like(label_hwc_u8)
    for src, dst in _RENDER.items():
        mask = np.all(label_hwc_u8 == np.array(src, dtype=np.uint8), axis=-1)
        out[mask] = np.array(dst, dtype=np.uint8)
    # border shading: any 4-neighbor label change darkens the rendered pixel
    padded = np.pad(label_hwc_u8, ((1, 1), (1, 1), (0, 0)), mode="edge")
    border = np.zeros((h, w), dtype=bool)
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        shifted = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        border |= np.any(shifted != label_hwc_u8, axis=-1)
    out[border] = out[border] // 2
    return out


def _random_label_map(size: int, rng: RngStream) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = _BG
    n_rects = rng.randint_inclusive(2, 4)
    for _ in range(n_rects):
        x0 = rng.randint_inclusive(0, size - 5)
        y0 = rng.randint_inclusive(0, size - 5)
        x1 = rng.randint_inclusive(x0 + 3, min(size - 1, x0 + size // 2 + 3))
        y1 = rng.randint_inclusive(y0 + 3, min(size - 1, y0 + size // 2 + 3))
        color = _PALETTE[rng.randint_inclusive(0, len(_PALETTE) - 1)]
        img[y0 : y1 + 1, x0 : x1 + 1] = color
    return img


def _textured_shape(size: int, rng: RngStream, style: str) -> np.ndarray:
    """One rectangle on a light background, textured with stripes or dots."""
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = (225, 225, 230)
    x0 = rng.randint_inclusive(1, size // 2)
    y0 = rng.randint_inclusive(1, size // 2)
    x1 = rng.randint_inclusive(x0 + size // 4, size - 2)
    y1 = rng.randint_inclusive(y0 + size // 4, size - 2)
    base = np.array(_PALETTE[rng.randint_inclusive(0, len(_PALETTE) - 1)], dtype=np.uint8)
    dark = base // 3
    yy, xx = np.mgrid[0:size, 0:size]
    inside = (yy >= y0) & (yy <= y1) & (xx >= x0) & (xx <= x1)
    if style == "stripes":
        texture = (yy // 2) % 2 == 0
    else:
        texture = (yy % 4 < 2) & (xx % 4 < 2)
    img[inside & texture] = dark
    img[inside & ~texture] = base
    return img


def make_synthetic(task: str, n: int, size: int, seed: int, out_dir) -> Path:
    """Write a deterministic synthetic dataset; returns the dataset root.

    Paired: label maps (domain A) side by side with their rendering (domain
    B). Unpaired: striped vs dotted textures of one shape family. ``n`` train
    images per domain plus max(4, n // 4) validation images.
    """
    if task not in ("paired", "unpaired"):
        raise ValueError(f"task must be 'paired' or 'unpaired', got {task!r}")
    if size < 16 or size & (size - 1):
        raise ValueError(f"size must be a power of two >= 16, got {size}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = Path(out_dir)
    rng = RngStream(seed)
    n_val = max(4, n // 4)
    if task == "paired":
        for split, count in (("train", n), ("val", n_val)):
            (out / split).mkdir(parents=True, exist_ok=True)
            for i in range(count):
                label = _random_label_map(size, rng)
                target = render_label_map(label)
                write_image_u8(out / split / f"pair_{i:04d}.png", np.concatenate([label, target], axis=1))
    else:
        for split, count in (("train", n), ("val", n_val)):
            for domain, style in (("A", "stripes"), ("B", "dots")):
                sub = out / f"{split}{domain}"
                sub.mkdir(parents=True, exist_ok=True)
                for i in range(count):
                    img = _textured_shape(size, rng, style)
                    write_image_u8(sub / f"{domain.lower()}_{i:04d}.png", img)
    return out
