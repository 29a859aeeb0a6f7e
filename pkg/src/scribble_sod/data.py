"""Samples, manifests, batching and training-time augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .config import Label
from .netpbm import load_image, load_mask, load_scribble
from .ops import resize_array

LEGAL_SCRIBBLE = (int(Label.UNLABELED), int(Label.FOREGROUND), int(Label.BACKGROUND))


class DataError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    scribble: np.ndarray  # (H, W) Label codes
    full_mask: Optional[np.ndarray] = None  # (H, W) {0, 1}; evaluation only
    id: str = ""

    def __post_init__(self):
        h, w = self.image.shape[1:]
        if self.scribble.shape != (h, w):
            raise DataError(f"sample {self.id!r}: scribble {self.scribble.shape} does not match image {(h, w)}")
        if self.full_mask is not None and self.full_mask.shape != (h, w):
            raise DataError(f"sample {self.id!r}: mask {self.full_mask.shape} does not match image {(h, w)}")


@dataclass
class ManifestEntry:
    image: Path
    scribble: Path
    mask: Optional[Path]

    @property
    def id(self) -> str:
        return self.image.stem


@dataclass
class DatasetManifest:
    root: Path
    entries: list
    split: str = "train"

    def __len__(self) -> int:
        return len(self.entries)

    def load(self, index: int) -> Sample:
        e = self.entries[index]
        mask = load_mask(e.mask) if e.mask is not None else None
        return Sample(load_image(e.image), load_scribble(e.scribble), mask, e.id)

    def samples(self) -> Iterator[Sample]:
        for i in range(len(self.entries)):
            yield self.load(i)

    @property
    def has_masks(self) -> bool:
        return all(e.mask is not None for e in self.entries)


def read_manifest(path, split: Optional[str] = None) -> DatasetManifest:
    """Parse ``image<TAB>scribble[<TAB>mask]`` lines (paths relative to the manifest)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    root = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise DataError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields, got {len(parts)}")
        files = [root / p for p in parts]
        for f in files:
            if not f.is_file():
                raise DataError(f"{path}:{lineno}: referenced file {f} does not exist")
        entries.append(ManifestEntry(files[0], files[1], files[2] if len(files) == 3 else None))
    if not entries:
        raise DataError(f"manifest {path} is empty")
    return DatasetManifest(root, entries, split or path.stem)


def write_manifest(path, rows: list) -> None:
    """``rows`` holds (image, scribble[, mask]) paths relative to the manifest's directory."""
    Path(path).write_text("".join("\t".join(str(p) for p in row) + "\n" for row in rows))


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Permutation of sample indices; a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch, 0x5EED]).permutation(n)


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------
def nearest_index(in_size: int, out_size: int) -> np.ndarray:
    """Source index per destination pixel for nearest-neighbour resampling (half-pixel centres)."""
    src = np.floor((np.arange(out_size) + 0.5) * in_size / out_size).astype(int)
    return np.clip(src, 0, in_size - 1)


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape[-2:]
    return arr[..., nearest_index(h, out_h)[:, None], nearest_index(w, out_w)[None, :]]


def hflip(sample: Sample) -> Sample:
    return replace(sample,
                   image=sample.image[:, :, ::-1].copy(),
                   scribble=sample.scribble[:, ::-1].copy(),
                   full_mask=None if sample.full_mask is None else sample.full_mask[:, ::-1].copy())


def crop(sample: Sample, top: int, left: int, size: int) -> Sample:
    sl = (slice(top, top + size), slice(left, left + size))
    return replace(sample,
                   image=sample.image[(slice(None),) + sl].copy(),
                   scribble=sample.scribble[sl].copy(),
                   full_mask=None if sample.full_mask is None else sample.full_mask[sl].copy())


def resize_sample(sample: Sample, size: int) -> Sample:
    """Bilinear for the image, nearest-neighbour for labels."""
    return replace(sample,
                   image=np.clip(resize_array(sample.image, size, size), 0.0, 1.0),
                   scribble=resize_nearest(sample.scribble, size, size),
                   full_mask=None if sample.full_mask is None else resize_nearest(sample.full_mask, size, size))


def augment_margin_size(train_size: int) -> int:
    big = train_size + math.ceil(train_size / 10)
    return big + (big % 2)


def augment(sample: Sample, seed, train_size: int, max_rerolls: int = 10) -> Sample:
    """Resize with a ~10% margin, random crop to ``train_size``, random horizontal flip.

    A crop that loses every foreground scribble is re-drawn up to
    ``max_rerolls`` times, then accepted.
    """
    if train_size % 16:
        raise DataError(f"train_size must be divisible by 16, got {train_size}")
    rng = np.random.default_rng(seed)
    big = augment_margin_size(train_size)
    resized = resize_sample(sample, big)
    span = big - train_size
    for _ in range(max_rerolls + 1):
        top, left = (int(v) for v in rng.integers(0, span + 1, size=2))
        out = crop(resized, top, left, train_size)
        if (out.scribble == Label.FOREGROUND).any():
            break
    if rng.random() < 0.5:
        out = hflip(out)
    return out


def collate(samples: list) -> tuple:
    """Stack samples into ``(images[N,3,H,W], scribbles[N,H,W])``."""
    return np.stack([s.image for s in samples]), np.stack([s.scribble for s in samples])
