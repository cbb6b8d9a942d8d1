"""Generated two-class image sets for demos and end-to-end tests.

Class 0 images carry a bright blob in the upper-left part of the frame,
class 1 images a dimmer blob in the lower-right part; positions, radii and
brightness jitter per image, over a random low-frequency background plus pixel
noise. Candidates whose difference hash lands within the near-duplicate
threshold of an earlier image are redrawn, so a generated set is free of
duplicates unless some are planted on purpose.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import DatasetManifest, ManifestEntry, build_manifest, dhash64, hamming
from .dedup import DEFAULT_THRESHOLD

CLASS_DIRS = ("class_a", "class_b")


def _background(size: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    coarse = rng.uniform(-amplitude, amplitude, (9, 9)).astype(np.float32)
    field = Image.fromarray(coarse, mode="F").resize((size, size), Image.Resampling.BILINEAR)
    return np.asarray(field, dtype=np.float64)


def blob_image(label: int, size: int, rng: np.random.Generator, noise: float = 12.0,
               background: float = 50.0) -> np.ndarray:
    """One H x W x 3 uint8 image for ``label``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if label == 0:
        cy, cx = rng.uniform(0.2, 0.4, 2) * size
        peak = rng.uniform(170, 220)
    else:
        cy, cx = rng.uniform(0.6, 0.8, 2) * size
        peak = rng.uniform(90, 140)
    radius = rng.uniform(0.12, 0.2) * size
    blob = peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
    tint = rng.uniform(0.8, 1.0, 3)
    base = 60 + _background(size, rng, background)
    img = (base + blob)[..., None] * tint + rng.normal(0, noise, (size, size, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def distinct_blob_image(label, size, rng, hashes: list[int], min_distance: int = DEFAULT_THRESHOLD + 1,
                        max_tries: int = 1000) -> np.ndarray:
    """Draw images until one is at least ``min_distance`` bits from every hash in ``hashes``; records its hash."""
    for _ in range(max_tries):
        img = blob_image(label, size, rng)
        h = dhash64(img)
        if all(hamming(h, other) >= min_distance for other in hashes):
            hashes.append(h)
            return img
    raise RuntimeError(f"no image {min_distance} bits away from {len(hashes)} others after {max_tries} draws")


def write_blob_dataset(root, counts=(100, 20, 25), size: int = 32, seed: int = 0) -> DatasetManifest:
    """Write ``root/class_a`` and ``root/class_b`` PNGs and return their split manifest.

    ``counts`` is the per-class (train, val, test) size. Files are named
    ``<split>_<index>.png`` so the split assignment is recoverable from the
    file name alone.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    split_of = {}
    hashes: list[int] = []
    for label, cls in enumerate(CLASS_DIRS):
        (root / cls).mkdir(parents=True, exist_ok=True)
        for split, n in zip(("train", "val", "test"), counts):
            for i in range(n):
                rel = f"{cls}/{split}_{i:04d}.png"
                Image.fromarray(distinct_blob_image(label, size, rng, hashes)).save(root / rel)
                split_of[rel] = split
    manifest = build_manifest(root)
    entries = [ManifestEntry(e.path, e.label, split_of[e.path], e.content_hash, e.phash) for e in manifest.entries]
    return DatasetManifest(entries, root=root, class_names=manifest.class_names)
