"""Exact and near-duplicate detection with a cross-split leak audit.

Near duplicates are found with multi-index hashing: the 64 hash bits are cut
into ``threshold + 1`` bands, and two hashes within Hamming distance
``threshold`` must agree exactly on at least one band (pigeonhole). Only
pairs sharing a band value are compared bit by bit.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from .data import DatasetManifest, hamming

DEFAULT_THRESHOLD = 8
HASH_BITS = 64


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self) -> list[list[int]]:
        out = defaultdict(list)
        for i in range(len(self.parent)):
            out[self.find(i)].append(i)
        return list(out.values())


@dataclass(frozen=True)
class Cluster:
    paths: tuple[str, ...]
    splits: tuple[str, ...]

    @property
    def is_leak(self) -> bool:
        return len(self.splits) > 1


@dataclass
class DedupReport:
    exact: list[Cluster]
    near: list[Cluster]
    leaks: list[Cluster]
    threshold: int

    def summary(self) -> str:
        return (f"exact duplicate clusters: {len(self.exact)}\n"
                f"near duplicate clusters (hamming <= {self.threshold}): {len(self.near)}\n"
                f"cross-split leaks: {len(self.leaks)}")


def _bands(threshold: int) -> list[tuple[int, int]]:
    k = threshold + 1
    edges = [round(i * HASH_BITS / k) for i in range(k + 1)]
    return [(lo, hi) for lo, hi in zip(edges, edges[1:]) if hi > lo]


def near_pairs(hashes: list[int], threshold: int) -> set[tuple[int, int]]:
    """All index pairs (i < j) with Hamming distance <= threshold."""
    n = len(hashes)
    if threshold >= HASH_BITS:
        return {(i, j) for i in range(n) for j in range(i + 1, n)}
    pairs = set()
    for lo, hi in _bands(threshold):
        mask = (1 << (hi - lo)) - 1
        buckets = defaultdict(list)
        for i, h in enumerate(hashes):
            buckets[(h >> lo) & mask].append(i)
        for members in buckets.values():
            for a in range(len(members)):
                for b in range(a + 1, len(members)):
                    i, j = members[a], members[b]
                    if (i, j) not in pairs and hamming(hashes[i], hashes[j]) <= threshold:
                        pairs.add((i, j))
    return pairs


def _clusters(entries, uf: UnionFind) -> list[Cluster]:
    out = []
    for members in uf.groups():
        if len(members) < 2:
            continue
        paths = tuple(sorted(entries[i].path for i in members))
        splits = tuple(sorted({entries[i].split for i in members}))
        out.append(Cluster(paths, splits))
    return sorted(out, key=lambda c: c.paths)


def dedup_scan(manifest: DatasetManifest, threshold: int = DEFAULT_THRESHOLD) -> DedupReport:
    """Cluster duplicates and report clusters that span more than one split.

    Exact clusters group equal content hashes. Near clusters are the
    transitive closure of ``hamming(phash) <= threshold``. Leaks are the
    connected components of the union of both relations that touch two or
    more splits.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    entries = sorted(manifest.entries, key=lambda e: e.path)
    n = len(entries)

    exact_uf, near_uf, any_uf = UnionFind(n), UnionFind(n), UnionFind(n)
    first_seen: dict[str, int] = {}
    for i, e in enumerate(entries):
        if e.content_hash in first_seen:
            exact_uf.union(first_seen[e.content_hash], i)
            any_uf.union(first_seen[e.content_hash], i)
        else:
            first_seen[e.content_hash] = i
    for i, j in near_pairs([e.phash_int for e in entries], threshold):
        near_uf.union(i, j)
        any_uf.union(i, j)

    leaks = [c for c in _clusters(entries, any_uf) if c.is_leak]
    return DedupReport(_clusters(entries, exact_uf), _clusters(entries, near_uf), leaks, threshold)
