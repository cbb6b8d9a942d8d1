"""Generated image sets with planted duplicates, shared by the dedup, CLI and acceptance tests."""

from pathlib import Path

import numpy as np
from PIL import Image

from sepconv.data import DatasetManifest, ManifestEntry, build_manifest, dhash64, hamming
from sepconv.synthetic import CLASS_DIRS, distinct_blob_image

SPLIT_PLAN = (("train", 35), ("val", 4), ("test", 6))


def planted_duplicate_set(root, seed=0, n_exact=5, n_near=5):
    """90 distinct images plus ``n_exact`` byte copies (into test) and ``n_near`` brightened copies (into val).

    Returns ``(manifest, planted)`` where ``planted`` lists (original, copy) path pairs;
    each pair crosses a split boundary.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    hashes, split_of, pixels = [], {}, {}
    for label, cls in enumerate(CLASS_DIRS):
        (root / cls).mkdir(parents=True, exist_ok=True)
        for split, n in SPLIT_PLAN:
            for i in range(n):
                rel = f"{cls}/{split}_{i:04d}.png"
                img = distinct_blob_image(label, 32, rng, hashes)
                Image.fromarray(img).save(root / rel)
                split_of[rel], pixels[rel] = split, img
    train = sorted(p for p, s in split_of.items() if s == "train")
    picks = rng.choice(len(train), n_exact + n_near, replace=False)
    planted = []
    for k, idx in enumerate(picks):
        src = train[idx]
        cls = src.split("/")[0]
        if k < n_exact:
            dst = f"{cls}/test_exact_{k:02d}.png"
            (root / dst).write_bytes((root / src).read_bytes())
            split_of[dst] = "test"
        else:
            dst = f"{cls}/val_near_{k:02d}.png"
            brighter = np.clip(pixels[src].astype(int) + 2, 0, 255).astype(np.uint8)
            assert hamming(dhash64(brighter), dhash64(pixels[src])) <= 8
            Image.fromarray(brighter).save(root / dst)
            split_of[dst] = "val"
        planted.append((src, dst))
    m = build_manifest(root)
    entries = [ManifestEntry(e.path, e.label, split_of[e.path], e.content_hash, e.phash) for e in m.entries]
    return DatasetManifest(entries, root=root, class_names=m.class_names), planted


def brute_force_clusters(entries, threshold=8):
    """(exact, near, leaks) as sorted tuples of sorted path tuples, by checking every pair."""
    n = len(entries)

    def components(linked):
        seen, out = set(), []
        for start in range(n):
            if start in seen:
                continue
            stack, comp = [start], []
            seen.add(start)
            while stack:
                i = stack.pop()
                comp.append(i)
                for j in range(n):
                    if j not in seen and linked(i, j):
                        seen.add(j)
                        stack.append(j)
            if len(comp) > 1:
                out.append(comp)
        return out

    exact = lambda i, j: entries[i].content_hash == entries[j].content_hash  # noqa: E731
    near = lambda i, j: hamming(entries[i].phash_int, entries[j].phash_int) <= threshold  # noqa: E731
    paths = lambda comps: sorted(tuple(sorted(entries[i].path for i in c)) for c in comps)  # noqa: E731
    combined = components(lambda i, j: exact(i, j) or near(i, j))
    leaks = [c for c in combined if len({entries[i].split for i in c}) > 1]
    return paths(components(exact)), paths(components(near)), paths(leaks)
