"""
Finding duplicates that cross splits
====================================

A byte-identical copy and a slightly brightened copy of a training image
are planted in the test split. The exact copy shares its SHA-256 digest;
the brightened one lands a few bits away in difference-hash space. Both
show up as cross-split leaks.
"""

import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from sepconv.data import DatasetManifest, ManifestEntry, build_manifest, dhash64, hamming
from sepconv.dedup import dedup_scan
from sepconv.synthetic import write_blob_dataset

root = Path(tempfile.mkdtemp()) / "data"
manifest = write_blob_dataset(root, counts=(20, 4, 6), seed=1)
print(dedup_scan(manifest).summary())

source = root / "class_a" / "train_0000.png"
(root / "class_a" / "test_copy.png").write_bytes(source.read_bytes())
pixels = np.asarray(Image.open(source))
Image.fromarray(np.clip(pixels.astype(int) + 3, 0, 255).astype(np.uint8)).save(root / "class_a" / "test_bright.png")
print("hash distance to brightened copy:", hamming(dhash64(source), dhash64(root / "class_a" / "test_bright.png")))

# rebuild the manifest with the two new files in the test split
fresh = build_manifest(root)
old_split = {e.path: e.split for e in manifest.entries}
leaky = DatasetManifest([ManifestEntry(e.path, e.label, old_split.get(e.path, "test"), e.content_hash, e.phash)
                         for e in fresh.entries], root=root)
report = dedup_scan(leaky)
print(report.summary())
for cluster in report.leaks:
    print("  ", cluster.splits, cluster.paths)
