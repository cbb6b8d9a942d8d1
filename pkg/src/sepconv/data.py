"""Image loading, dataset manifests, stratified splits and batching."""

from __future__ import annotations

import csv
import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .kernels import DTYPE

SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
MANIFEST_FIELDS = ("path", "label", "split", "content_hash", "phash")

# Per-class composition of the reference dataset: train / val / test.
REFERENCE_SPLIT_COUNTS = (1327, 80, 140)
DEFAULT_FRACTIONS = tuple(c / sum(REFERENCE_SPLIT_COUNTS) for c in REFERENCE_SPLIT_COUNTS)

PIXEL_SCALE = 127.5
PIXEL_OFFSET = 1.0


class ImageLoadError(OSError):
    pass


class ManifestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def _open(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageLoadError(f"cannot decode image {path}: {exc}") from exc
    return img


def normalize(pixels) -> np.ndarray:
    """Map [0, 255] to [-1, 1]."""
    return (np.asarray(pixels, dtype=DTYPE) / DTYPE(PIXEL_SCALE) - DTYPE(PIXEL_OFFSET)).astype(DTYPE)


def denormalize(x) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + PIXEL_OFFSET) * PIXEL_SCALE


def resize_bilinear(channels: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an H x W x C float array to size x size (aspect ratio is not kept)."""
    out = np.empty((size, size, channels.shape[2]), dtype=np.float32)
    for c in range(channels.shape[2]):
        band = Image.fromarray(np.ascontiguousarray(channels[:, :, c], dtype=np.float32), mode="F")
        out[:, :, c] = np.asarray(band.resize((size, size), Image.Resampling.BILINEAR), dtype=np.float32)
    return out


def image_to_array(img: Image.Image) -> np.ndarray:
    """8-bit RGB pixels as float32 H x W x 3; grayscale is replicated to three channels."""
    if img.mode not in ("RGB", "L"):
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr


def load_image(path, resolution: int) -> np.ndarray:
    """Decode, stretch to resolution x resolution and normalize; returns 1 x res x res x 3."""
    pixels = image_to_array(_open(path))
    if pixels.shape[:2] != (resolution, resolution):
        pixels = resize_bilinear(pixels, resolution)
    return normalize(pixels)[None]


def _grayscale(image) -> np.ndarray:
    if isinstance(image, (str, Path)):
        image = _open(image)
    if isinstance(image, np.ndarray) and image.dtype == np.uint8:
        # same rounding as hashing the decoded file
        image = Image.fromarray(image)
    if isinstance(image, Image.Image):
        return np.asarray(image.convert("L"), dtype=np.float32)
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 3:
        # ITU-R 601-2 luma, same weights PIL uses for "L"
        arr = arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114
    return arr


def dhash64(image) -> int:
    """64-bit difference hash.

    The grayscale image is reduced to 9 columns x 8 rows; bit ``8*r + c`` is
    set when pixel (r, c) is brighter than its right neighbour (r, c+1).
    ``image`` may be a path, a PIL image or an H x W (x 3) array.
    """
    gray = Image.fromarray(np.ascontiguousarray(_grayscale(image)), mode="F")
    small = np.asarray(gray.resize((9, 8), Image.Resampling.BILINEAR), dtype=np.float64)
    bits = (small[:, :-1] > small[:, 1:]).reshape(-1)
    return int(sum(1 << i for i, b in enumerate(bits) if b))


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str = ""
    content_hash: str = ""
    phash: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ManifestError(f"{self.path}: label must be 0 or 1, got {self.label}")
        if self.split not in ("",) + SPLITS:
            raise ManifestError(f"{self.path}: split must be one of {SPLITS}, got {self.split!r}")

    @property
    def phash_int(self) -> int:
        return int(self.phash, 16)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path | None = None
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ManifestError(f"duplicate path in manifest: {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict[tuple[str, int], int]:
        out: dict[tuple[str, int], int] = {}
        for e in self.entries:
            out[(e.split, e.label)] = out.get((e.split, e.label), 0) + 1
        return out

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(entry.path) if self.root is None else Path(self.root) / entry.path

    def write(self, path) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for e in self.entries:
            writer.writerow([e.path, e.label, e.split, e.content_hash, e.phash])
        Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")

    @classmethod
    def read(cls, path, root=None) -> "DatasetManifest":
        path = Path(path)
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != MANIFEST_FIELDS:
                raise ManifestError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}, got {header}")
            entries = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(MANIFEST_FIELDS):
                    raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields, got {len(row)}")
                try:
                    label = int(row[1])
                except ValueError:
                    raise ManifestError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
                try:
                    entries.append(ManifestEntry(row[0], label, row[2], row[3], row[4]))
                except ManifestError as exc:
                    raise ManifestError(f"{path}:{lineno}: {exc}") from None
        return cls(entries, root=Path(root) if root is not None else path.parent)


def _hash_file(path: Path) -> tuple[str, str]:
    return file_sha256(path), f"{dhash64(path):016x}"


def build_manifest(root, workers: int = 4) -> DatasetManifest:
    """One entry per image under ``root/<class>/``; classes are the two subdirectories in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"data directory {root} does not exist")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if len(classes) != 2:
        raise ManifestError(f"{root}: expected exactly 2 class directories, found {classes}")
    items = []
    for label, name in enumerate(classes):
        files = sorted(p for p in (root / name).rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ManifestError(f"class directory {root / name} contains no images")
        items.extend((p.relative_to(root).as_posix(), label, p) for p in files)
    items.sort(key=lambda t: t[0])
    # hashing may run in any order; results are assembled in path order
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        hashes = list(pool.map(_hash_file, [p for _, _, p in items]))
    entries = [ManifestEntry(rel, label, "", digest, phash) for (rel, label, _), (digest, phash) in zip(items, hashes)]
    return DatasetManifest(entries, root=root, class_names=tuple(classes))


def _apportion(n: int, fractions) -> list[int]:
    """Largest-remainder split of ``n`` into parts proportional to ``fractions`` (ties go to the earlier part)."""
    total = sum(fractions)
    raw = [n * f / total for f in fractions]
    parts = [int(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - parts[i]), i))
    for i in order[: n - sum(parts)]:
        parts[i] += 1
    return parts


def split_dataset(manifest: DatasetManifest, fractions=None, counts=None, seed: int = 0) -> DatasetManifest:
    """Stratified train/val/test assignment.

    ``counts`` gives absolute per-class sizes (train, val, test); otherwise
    ``fractions`` (default: the 1327:80:140 per-class composition) are
    apportioned per class by largest remainder. Each class is shuffled with a
    generator seeded from ``(seed, label)``.
    """
    if counts is not None and fractions is not None:
        raise ValueError("pass either fractions or counts, not both")
    if fractions is None:
        fractions = DEFAULT_FRACTIONS
    if len(fractions) != 3 or min(fractions) < 0 or sum(fractions) <= 0:
        raise ValueError(f"fractions must be three non-negative numbers, got {fractions}")
    by_label: dict[int, list[ManifestEntry]] = {}
    for e in sorted(manifest.entries, key=lambda e: e.path):
        by_label.setdefault(e.label, []).append(e)
    assigned = {}
    for label in sorted(by_label):
        group = by_label[label]
        if counts is not None:
            sizes = list(counts)
            if min(sizes) < 0:
                raise ValueError(f"counts must be non-negative, got {counts}")
            if sum(sizes) > len(group):
                raise ManifestError(
                    f"class {label}: requested {sum(sizes)} images ({'/'.join(map(str, sizes))}) "
                    f"but only {len(group)} available"
                )
        else:
            sizes = _apportion(len(group), fractions)
        perm = np.random.default_rng([seed, label]).permutation(len(group))
        pos = 0
        for split, size in zip(SPLITS, sizes):
            for idx in perm[pos:pos + size]:
                assigned[group[idx].path] = split
            pos += size
    entries = [replace(e, split=assigned.get(e.path, "")) for e in manifest.entries]
    return DatasetManifest(entries, root=manifest.root, class_names=manifest.class_names)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    paths: list[str]


def load_split(manifest: DatasetManifest, split: str, resolution: int, workers: int = 4):
    """Decode every image of ``split`` into memory: (images N x res x res x 3, labels, paths)."""
    entries = manifest.split(split)
    if not entries:
        raise ManifestError(f"split {split!r} is empty")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        images = list(pool.map(lambda e: load_image(manifest.resolve(e), resolution)[0], entries))
    return np.stack(images), np.array([e.label for e in entries], dtype=np.int64), [e.path for e in entries]


def iter_batches(images, labels, batch_size: int, seed: int | None = None, epoch: int = 0,
                 paths=None) -> Iterator[Batch]:
    """Yield batches in a per-epoch seeded order (``seed=None`` keeps the stored order). The last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(labels)
    order = np.arange(n) if seed is None else np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(images[idx], labels[idx], [paths[i] for i in idx] if paths is not None else [])


def batches(manifest: DatasetManifest, split: str, batch_size: int, resolution: int,
            seed: int = 0, epoch: int = 0) -> Iterator[Batch]:
    images, labels, paths = load_split(manifest, split, resolution)
    return iter_batches(images, labels, batch_size, seed, epoch, paths)
