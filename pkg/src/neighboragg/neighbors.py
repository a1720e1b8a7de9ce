"""Per-class exact nearest-neighbor search and neighborhood similarity vectors.

One KD-tree per class over the training split. A query against class c
returns its K nearest training points under the Euclidean metric; the
Laplacian kernel exp(-distance) turns distances into similarities in (0, 1].
The neighborhood vector concatenates the per-class similarity blocks in
class order (class-major, nearest first), zero-padding blocks whose class
has fewer than K training samples: zero is the kernel's infinitely-far limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .dataset import Dataset
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class KernelConfig:
    """Similarity kernel configuration. transform is an extension point for
    embedding maps; only the identity is implemented."""

    transform: str = "identity"
    metric: str = "euclidean"
    kernel: str = "laplacian"

    def __post_init__(self):
        if self.transform != "identity":
            raise ConfigError(f"unsupported transform {self.transform!r}")
        if self.metric != "euclidean":
            raise ConfigError(f"unsupported metric {self.metric!r}")
        if self.kernel != "laplacian":
            raise ConfigError(f"unsupported kernel {self.kernel!r}")


def similarity_from_distance(dist):
    """Laplacian kernel: exp(-d). Maps 0 to 1, decays toward 0."""
    return np.exp(-np.asarray(dist, dtype=np.float64))


@dataclass(eq=False)
class ClassIndex:
    """Immutable per-class KD-trees plus the ids needed for self-exclusion."""

    trees: tuple  # one cKDTree per class
    class_ids: tuple  # (m_c,) int64 ids per class, aligned with tree data
    k: int
    config: KernelConfig
    num_classes: int
    dim: int
    id_set: frozenset = field(default_factory=frozenset)

    def class_size(self, c: int) -> int:
        return len(self.class_ids[c])


def build_index(train: Dataset, cfg: KernelConfig, k: int) -> ClassIndex:
    """One exact KD-tree per class over the training split."""
    if k < 1:
        raise ConfigError(f"need K >= 1, got {k}")
    trees = []
    ids = []
    for c in range(train.num_classes):
        members = np.flatnonzero(train.labels == c)
        if len(members) == 0:
            raise DataError(f"class {c} has no training samples to index")
        trees.append(cKDTree(train.features[members]))
        ids.append(train.sample_ids[members].copy())
    return ClassIndex(
        trees=tuple(trees),
        class_ids=tuple(ids),
        k=k,
        config=cfg,
        num_classes=train.num_classes,
        dim=train.dim,
        id_set=frozenset(int(i) for i in train.sample_ids),
    )


def knn_query(index: ClassIndex, x, c: int, exclude_id=None):
    """Exact K nearest neighbors of x within class c.

    Returns up to K (sample id, distance) pairs sorted by ascending
    distance, ties broken by ascending id; exclude_id (if present in the
    class) is never returned. Candidate retrieval expands while distance
    ties straddle the cutoff, so the id tie rule holds exactly.
    """
    if not 0 <= c < index.num_classes:
        raise ConfigError(f"class {c} out of range [0, {index.num_classes})")
    x = np.asarray(x, dtype=np.float64)
    tree = index.trees[c]
    ids = index.class_ids[c]
    m = len(ids)
    k = min(index.k + 1, m)
    while True:
        dists, rows = tree.query(x, k=k)
        dists = np.atleast_1d(dists)
        rows = np.atleast_1d(rows)
        cand = [(float(d), int(ids[r])) for d, r in zip(dists, rows)
                if exclude_id is None or int(ids[r]) != int(exclude_id)]
        cand.sort(key=lambda t: (t[0], t[1]))
        selected = cand[: index.k]
        boundary = float(dists[-1])
        complete = (k == m) or (len(selected) == index.k and selected[-1][0] < boundary)
        if complete:
            return [(sid, d) for d, sid in selected]
        k = min(2 * k, m)


def similarity_vector(index: ClassIndex, x, c: int, exclude_id=None) -> np.ndarray:
    """Length-K similarities to the class-c neighbors, zero-padded at the tail."""
    out = np.zeros(index.k)
    for slot, (_, dist) in enumerate(knn_query(index, x, c, exclude_id)):
        out[slot] = similarity_from_distance(dist)
    return out


def neighborhood_vector(index: ClassIndex, x, exclude_id=None) -> np.ndarray:
    """Length C*K concatenation of per-class similarity blocks, class-major."""
    return np.concatenate([
        similarity_vector(index, x, c, exclude_id) for c in range(index.num_classes)
    ])


def neighborhood_matrix(index: ClassIndex, x: np.ndarray, exclude_ids=None,
                        workers: int = 1) -> np.ndarray:
    """Batch neighborhood vectors: (N, C*K) for N query rows.

    exclude_ids, when given, is aligned with rows; an id absent from a class
    is a no-op there, so passing the queried dataset's own ids yields
    leave-one-out semantics exactly for rows that live in the index.

    Tied distances at the K-th cutoff may resolve to different neighbors
    than knn_query's id rule, but tied distances carry equal similarity, so
    the returned values are exact either way.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if x.ndim != 2 or x.shape[1] != index.dim:
        raise DataError(f"expected (N, {index.dim}) queries, got shape {x.shape}")
    if exclude_ids is not None:
        exclude_ids = np.asarray(exclude_ids, dtype=np.int64)
        if exclude_ids.shape != (n,):
            raise DataError("exclude_ids must align with query rows")
    out = np.zeros((n, index.num_classes * index.k))
    for c in range(index.num_classes):
        ids = index.class_ids[c]
        m = len(ids)
        k = min(index.k + 1, m) if exclude_ids is not None else min(index.k, m)
        dists, rows = index.trees[c].query(x, k=k, workers=workers)
        dists = dists.reshape(n, k)
        rows = rows.reshape(n, k)
        sims = similarity_from_distance(dists)
        if exclude_ids is not None:
            hit = ids[rows] == exclude_ids[:, None]
            sims = np.where(hit, 0.0, sims)
            # stable push of excluded entries to the tail, keeping distance order
            order = np.argsort(hit, axis=1, kind="stable")
            sims = np.take_along_axis(sims, order, axis=1)
        width = min(index.k, sims.shape[1])
        out[:, c * index.k: c * index.k + width] = sims[:, :width]
    return out
