"""Comparison scorers: max-softmax confidence, temperature scaling, the
distance-ratio trust score, and an explicit one-hop graph convolution.

The graph construction doubles as an executable check that the
warm-started aggregator and the one-hop GCN compute the same pre-softmax
outputs. To keep that check two-route, the GCN's adjacency is built from
brute-force distance scans, independent of the KD-tree index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from .aggregator import init_params, pre_softmax
from .classifiers import EPS_LOG, one_hot, softmax
from .dataset import Dataset, make_dataset
from .errors import ConfigError, DataError
from .neighbors import (ClassIndex, KernelConfig, build_index, knn_query,
                        neighborhood_vector, similarity_from_distance)

EPS_DIST = 1e-12


def confidence_score(p) -> float:
    """Maximum softmax output, the standard trustworthiness baseline."""
    p = np.asarray(p, dtype=np.float64)
    return float(p.max())


# ---------------------------------------------------------------------------
# Temperature scaling


@dataclass(frozen=True)
class TemperatureModel:
    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise ConfigError(f"temperature must be positive, got {self.t}")


TEMPERATURE_GRID = np.logspace(-2.0, 2.0, 401)


def temperature_scaled_probs(model: TemperatureModel, probs: np.ndarray) -> np.ndarray:
    """softmax(log p / T) row-wise; zeros are floored before the log."""
    logits = np.log(np.maximum(np.atleast_2d(probs), EPS_LOG))
    return softmax(logits / model.t)


def fit_temperature(probs: np.ndarray, labels) -> TemperatureModel:
    """Grid-searched T minimizing mean NLL of softmax(log p / T) on the
    validation set. The grid is log-spaced over [1e-2, 1e2] with 401 points;
    ties resolve to the smaller T."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if probs.shape[0] != y.shape[0] or probs.shape[0] == 0:
        raise DataError("probs and labels must align and be nonempty")
    logits = np.log(np.maximum(probs, EPS_LOG))
    rows = np.arange(y.shape[0])
    best_t, best_nll = None, np.inf
    for t in TEMPERATURE_GRID:
        scaled = softmax(logits / t)
        nll = float(-np.log(np.maximum(scaled[rows, y], EPS_LOG)).mean())
        if nll < best_nll:
            best_t, best_nll = float(t), nll
    return TemperatureModel(t=best_t)


# ---------------------------------------------------------------------------
# Trust score (nearest-neighbor distance ratio)


def trust_score(index: ClassIndex, x, yhat: int, exclude_id=None) -> float:
    """d_other / max(d_pred, eps): the distance to the nearest point of any
    other class over the distance to the nearest predicted-class point."""
    if not 0 <= yhat < index.num_classes:
        raise ConfigError(f"predicted class {yhat} out of range")
    d_pred = None
    d_other = np.inf
    for c in range(index.num_classes):
        hits = knn_query(index, x, c, exclude_id)
        if not hits:
            continue
        d = hits[0][1]
        if c == yhat:
            d_pred = d
        else:
            d_other = min(d_other, d)
    if d_pred is None or not np.isfinite(d_other):
        raise DataError("trust score needs a neighbor in the predicted class "
                        "and in at least one other class")
    return float(d_other / max(d_pred, EPS_DIST))


def trust_score_batch(index: ClassIndex, x: np.ndarray, yhat, workers: int = 1) -> np.ndarray:
    """Vectorized trust scores for query rows not present in the index."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    dists = np.empty((n, index.num_classes))
    for c in range(index.num_classes):
        d, _ = index.trees[c].query(x, k=1, workers=workers)
        dists[:, c] = d.reshape(n)
    yhat = np.asarray(yhat, dtype=np.int64)
    d_pred = dists[np.arange(n), yhat]
    masked = dists.copy()
    masked[np.arange(n), yhat] = np.inf
    d_other = masked.min(axis=1)
    return d_other / np.maximum(d_pred, EPS_DIST)


# ---------------------------------------------------------------------------
# Explicit one-hop GCN


@dataclass(eq=False)
class OneHopGcn:
    """Bipartite one-hop graph convolution over train and evaluation nodes.

    Node features (columns of z): [one-hot label || 0] for training nodes,
    [0 || p] for evaluation nodes. The adjacency couples an evaluation node
    to its class-wise K nearest training points with weight kernel/K, is
    zero on the train-train and val-val blocks, and is symmetric. The
    output map applies the activation then w_out, mirroring the
    aggregator's read-out.
    """

    z: np.ndarray  # (2C, n_train + n_eval)
    adjacency: sparse.csr_matrix  # (n, n)
    n_train: int
    n_eval: int
    num_classes: int
    k: int
    w_out: np.ndarray  # (C, 2C)
    activation: str = "relu"

    def updated_features(self) -> np.ndarray:
        """Z' = Z (I + A)."""
        return self.z + self.z @ self.adjacency

    def eval_outputs(self) -> np.ndarray:
        """(n_eval, C) pre-softmax trust vectors for the evaluation nodes."""
        zp = self.updated_features()[:, self.n_train:]
        act = np.maximum(zp, 0.0) if self.activation == "relu" else zp
        return (self.w_out @ act).T


def build_onehop_gcn(train: Dataset, eval_features, eval_probs,
                     cfg: KernelConfig, k: int) -> OneHopGcn:
    """Construct the graph for one batch of evaluation points.

    Neighborhoods come from a brute-force per-class distance scan (not the
    KD-tree index), keeping this construction an independent route for the
    equivalence check.
    """
    del cfg  # only one kernel configuration exists; kept for surface symmetry
    if k < 1:
        raise ConfigError(f"need K >= 1, got {k}")
    x_eval = np.atleast_2d(np.asarray(eval_features, dtype=np.float64))
    p_eval = np.atleast_2d(np.asarray(eval_probs, dtype=np.float64))
    n_tr, n_ev = train.n, x_eval.shape[0]
    c = train.num_classes
    if p_eval.shape != (n_ev, c):
        raise DataError(f"eval probs shape {p_eval.shape} != {(n_ev, c)}")
    if x_eval.shape[1] != train.dim:
        raise DataError(f"eval features have dimension {x_eval.shape[1]}, "
                        f"expected {train.dim}")

    z = np.zeros((2 * c, n_tr + n_ev))
    z[:c, :n_tr] = one_hot(train.labels, c).T
    z[c:, n_tr:] = p_eval.T

    rows, cols, weights = [], [], []
    for cls in range(c):
        members = np.flatnonzero(train.labels == cls)
        if len(members) == 0:
            raise DataError(f"class {cls} has no training samples")
        dmat = cdist(x_eval, train.features[members])
        take = min(k, len(members))
        nearest = np.argpartition(dmat, take - 1, axis=1)[:, :take]
        for i in range(n_ev):
            for j in nearest[i]:
                w = similarity_from_distance(dmat[i, j]) / k
                rows.append(members[j])
                cols.append(n_tr + i)
                weights.append(w)
    n = n_tr + n_ev
    upper = sparse.coo_matrix((weights, (rows, cols)), shape=(n, n))
    adjacency = (upper + upper.T).tocsr()
    w_out = np.hstack([np.eye(c), np.eye(c)])
    return OneHopGcn(z=z, adjacency=adjacency, n_train=n_tr, n_eval=n_ev,
                     num_classes=c, k=k, w_out=w_out)


# ---------------------------------------------------------------------------
# Theorem-style equivalence check


def random_equivalence_instance(seed: int, n_train_max: int = 60, n_eval_max: int = 20,
                                c_max: int = 4, k_max: int = 3, d_max: int = 5):
    """Random small instance: training data, eval features, eval probabilities."""
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, c_max + 1))
    k = int(rng.integers(1, k_max + 1))
    d = int(rng.integers(1, d_max + 1))
    n_tr = int(rng.integers(max(c, 4), n_train_max + 1))
    n_ev = int(rng.integers(1, n_eval_max + 1))
    labels = np.concatenate([np.arange(c), rng.integers(0, c, size=n_tr - c)])
    labels = labels[rng.permutation(n_tr)]
    train = make_dataset(rng.normal(size=(n_tr, d)), labels, num_classes=c)
    x_eval = rng.normal(size=(n_ev, d))
    p_eval = rng.random((n_ev, c))
    p_eval /= p_eval.sum(axis=1, keepdims=True)
    return train, x_eval, p_eval, k


def verify_gcn_equivalence(seed: int, n_train_max: int = 60, n_eval_max: int = 20,
                           c_max: int = 4, k_max: int = 3, d_max: int = 5,
                           perturb: float = 0.0) -> float:
    """Max absolute difference between the warm-started aggregator's
    pre-softmax outputs and the explicit one-hop GCN on a random instance.

    perturb shifts w_h[0, 0] before the aggregator pass; nonzero values
    exist to show the check has power.
    """
    train, x_eval, p_eval, k = random_equivalence_instance(
        seed, n_train_max, n_eval_max, c_max, k_max, d_max)
    cfg = KernelConfig()
    index = build_index(train, cfg, k)
    params = init_params(train.num_classes, k, "gcn_warm_start")
    if perturb != 0.0:
        params.w_h[0, 0] += perturb
    agg = np.vstack([
        pre_softmax(params, neighborhood_vector(index, x_eval[i]), p_eval[i])
        for i in range(x_eval.shape[0])
    ])
    gcn = build_onehop_gcn(train, x_eval, p_eval, cfg, k).eval_outputs()
    return float(np.abs(agg - gcn).max())
