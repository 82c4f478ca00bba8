"""Datasets: a synthetic shapes generator (one white anti-aliased shape per
image, class = shape identity, position and scale as within-class factors)
and reader/writer for the big-endian IDX image/label format.

Pixels live in [-1, 1] throughout to match the tanh generator output.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, ValidationError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SHAPES = ("square", "disc", "cross")
_CROSS_ARM = 0.35  # arm half-width as a fraction of the shape half-extent
_SUPERSAMPLE = 4

# Extent multiplier per shape so that `scale` means the side of the
# equal-area square: every class carries the same lit mass, which keeps
# total luminance from acting as a class shortcut.
#   disc: pi r^2 = side^2          -> r = side / sqrt(pi)
#   cross: (8a/h - 4(a/h)^2) h^2   -> h = side / sqrt(2.31) with a = 0.35 h
_EXTENT = {
    "square": 1.0,
    "disc": 2.0 / math.sqrt(math.pi),
    "cross": 2.0 / math.sqrt(8 * _CROSS_ARM - 4 * _CROSS_ARM ** 2),
}


@dataclass
class ImageBatch:
    images: np.ndarray                 # N x (height*width), float32 in [-1, 1]
    labels: Optional[np.ndarray]       # N ints in [0, K), or None
    height: int
    width: int
    provenance: str                    # "synthetic" | "idx-file"
    manifest: Optional[dict] = None    # seed/factor ranges/classes for synthetic data

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def pixels(self) -> int:
        return self.height * self.width


def _render(shape: str, coords_x: np.ndarray, coords_y: np.ndarray,
            cx: float, cy: float, half: float) -> np.ndarray:
    dx = np.abs(coords_x - cx)
    dy = np.abs(coords_y - cy)
    if shape == "square":
        return (dx <= half) & (dy <= half)
    if shape == "disc":
        return dx * dx + dy * dy <= half * half
    if shape == "cross":
        arm = _CROSS_ARM * half
        return ((dx <= arm) & (dy <= half)) | ((dy <= arm) & (dx <= half))
    raise ValidationError(f"unknown shape {shape!r}; choose from {SHAPES}")


def gen_shapes(n_per_class: int, classes: Sequence[str], hw: int,
               scale_range: Tuple[float, float], jitter_range: float,
               rng: np.random.Generator, seed: Optional[int] = None) -> ImageBatch:
    """Render n_per_class images for each listed shape on an hw x hw canvas.

    scale_range bounds the shape size as a fraction of the canvas, measured
    as the side of the equal-area square, so every class lights the same
    number of pixels at a given scale. jitter_range bounds the |center
    offset| as a fraction of the canvas. Supersampled 4x4 per pixel for
    soft edges.
    """
    if hw < 8:
        raise ValidationError(f"canvas must be at least 8x8, got {hw}")
    lo, hi = scale_range
    if not (0 < lo <= hi <= 1):
        raise ValidationError(f"scale_range must lie within (0, 1], got {scale_range}")
    if jitter_range < 0:
        raise ValidationError(f"jitter_range must be >= 0, got {jitter_range}")
    for name in classes:
        if name not in SHAPES:
            raise ValidationError(f"unknown shape {name!r}; choose from {SHAPES}")
    # worst case: center pushed jitter_range*hw off-middle with the widest
    # half-extent among the requested classes (equal-area discs and crosses
    # reach past the side of the matching square)
    widest = max(_EXTENT[name] for name in classes)
    if jitter_range + widest * hi / 2.0 > 0.5 + 1e-12:
        raise ValidationError(
            f"a shape of scale {hi} jittered by {jitter_range} exceeds the canvas")

    s = _SUPERSAMPLE
    grid = (np.arange(hw * s) + 0.5) / s
    coords_y, coords_x = np.meshgrid(grid, grid, indexing="ij")

    images = np.empty((n_per_class * len(classes), hw * hw), dtype=np.float32)
    labels = np.empty(n_per_class * len(classes), dtype=np.int64)
    mid = hw / 2.0
    row = 0
    for label, name in enumerate(classes):
        for _ in range(n_per_class):
            scale = rng.uniform(lo, hi)
            cx = mid + rng.uniform(-jitter_range, jitter_range) * hw
            cy = mid + rng.uniform(-jitter_range, jitter_range) * hw
            half = _EXTENT[name] * scale * hw / 2.0
            mask = _render(name, coords_x, coords_y, cx, cy, half)
            cover = mask.reshape(hw, s, hw, s).mean(axis=(1, 3))
            images[row] = (cover * 2.0 - 1.0).astype(np.float32).reshape(-1)
            labels[row] = label
            row += 1

    manifest = {
        "seed": seed,
        "classes": list(classes),
        "n_per_class": n_per_class,
        "hw": hw,
        "scale_range": [lo, hi],
        "jitter_range": jitter_range,
    }
    return ImageBatch(images=images, labels=labels, height=hw, width=hw,
                      provenance="synthetic", manifest=manifest)


# ---------------------------------------------------------------------------
# IDX format


def _read_be32(fh, path, what) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated while reading {what} at offset {fh.tell()}")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path=None) -> ImageBatch:
    """Read an IDX image file (and optional label file); rescale to [-1, 1]."""
    images_path = Path(images_path)
    with open(images_path, "rb") as fh:
        magic = _read_be32(fh, images_path, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(
                f"{images_path}: offset 0: expected image magic "
                f"0x{IDX_IMAGE_MAGIC:08x}, found 0x{magic:08x}")
        count = _read_be32(fh, images_path, "count")
        height = _read_be32(fh, images_path, "height")
        width = _read_be32(fh, images_path, "width")
        raw = np.frombuffer(fh.read(), dtype=np.uint8)
    if raw.size != count * height * width:
        raise FormatError(
            f"{images_path}: payload holds {raw.size} bytes, "
            f"header promises {count * height * width}")
    images = (raw.astype(np.float32) / 255.0 * 2.0 - 1.0).reshape(count, height * width)

    labels = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        with open(labels_path, "rb") as fh:
            magic = _read_be32(fh, labels_path, "magic")
            if magic != IDX_LABEL_MAGIC:
                raise FormatError(
                    f"{labels_path}: offset 0: expected label magic "
                    f"0x{IDX_LABEL_MAGIC:08x}, found 0x{magic:08x}")
            n_labels = _read_be32(fh, labels_path, "count")
            labels = np.frombuffer(fh.read(), dtype=np.uint8).astype(np.int64)
        if n_labels != count or labels.size != count:
            raise FormatError(
                f"{labels_path}: {n_labels} labels vs {count} images")
    return ImageBatch(images=images, labels=labels, height=height, width=width,
                      provenance="idx-file")


def save_idx(batch: ImageBatch, images_path, labels_path=None) -> None:
    """Write a batch as an IDX pair; synthetic batches get a JSON manifest
    written beside the image file."""
    images_path = Path(images_path)
    as_bytes = np.clip(np.round((batch.images + 1.0) / 2.0 * 255.0), 0, 255)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, batch.n,
                             batch.height, batch.width))
        fh.write(as_bytes.astype(np.uint8).tobytes())
    if labels_path is not None:
        if batch.labels is None:
            raise ValidationError("cannot write labels: batch is unlabeled")
        with open(labels_path, "wb") as fh:
            fh.write(struct.pack(">II", IDX_LABEL_MAGIC, batch.n))
            fh.write(batch.labels.astype(np.uint8).tobytes())
    if batch.manifest is not None:
        manifest_path = images_path.with_name(images_path.name + ".manifest.json")
        manifest_path.write_text(json.dumps(batch.manifest, indent=2))


def split(batch: ImageBatch, test_fraction: float,
          rng: np.random.Generator) -> Tuple[ImageBatch, ImageBatch]:
    """Disjoint train/test split, stratified by label when labels exist."""
    if not 0 < test_fraction < 1:
        raise ValidationError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = batch.n
    if batch.labels is None:
        perm = rng.permutation(n)
        n_test = int(round(test_fraction * n))
        test_idx, train_idx = perm[:n_test], perm[n_test:]
    else:
        test_parts = []
        train_parts = []
        for label in np.unique(batch.labels):
            members = np.flatnonzero(batch.labels == label)
            members = members[rng.permutation(members.size)]
            n_test = int(round(test_fraction * members.size))
            test_parts.append(members[:n_test])
            train_parts.append(members[n_test:])
        test_idx = np.concatenate(test_parts)
        train_idx = np.concatenate(train_parts)

    def take(idx):
        return ImageBatch(
            images=batch.images[idx].copy(),
            labels=None if batch.labels is None else batch.labels[idx].copy(),
            height=batch.height, width=batch.width,
            provenance=batch.provenance, manifest=batch.manifest)

    return take(np.sort(train_idx)), take(np.sort(test_idx))
