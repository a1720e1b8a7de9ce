"""Adaptive aggregation of neighborhood similarities and classifier output.

The model maps a neighborhood vector h (length C*K) and a probability
vector p (length C) to a per-class trust vector

    t = softmax(W_out @ sigma([W_h @ h || W_p @ p]))

trained by mini-batch gradient descent on the scaled negative
log-likelihood -(1/C) * log t_y over the validation split. The
gcn_warm_start initialization (W_h block-averaging, W_p and the two
halves of W_out identity) makes the untrained model coincide with an
explicit one-hop graph convolution; see baselines.verify_gcn_equivalence.

Ablation variants are realized by zeroing one input branch: neigh_only
zeroes the p branch (equivalently W_p = 0), prob_only the h branch.
Masked parameters stay zero under training because ReLU's subgradient at
0 is 0 and the mask is re-applied after every update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import one_hot, predict_proba_batch, softmax
from .dataset import Dataset
from .errors import ConfigError, DataError, NumericError
from .neighbors import ClassIndex, neighborhood_matrix, neighborhood_vector

EPS_LOG = 1e-12

VARIANTS = ("full", "neigh_only", "prob_only")
ACTIVATIONS = ("relu", "identity")  # identity exists for the GCN equivalence check
INIT_MODES = ("gcn_warm_start", "random")


@dataclass(eq=False)
class AggregatorParams:
    """The three learnable maps. Shapes: w_h (C, C*K), w_p (C, C), w_out (C, 2C)."""

    w_h: np.ndarray
    w_p: np.ndarray
    w_out: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        c = self.w_p.shape[0]
        if self.w_p.shape != (c, c) or self.w_out.shape != (c, 2 * c):
            raise ConfigError(
                f"inconsistent shapes: w_p {self.w_p.shape}, w_out {self.w_out.shape}")
        if self.w_h.shape[0] != c or self.w_h.shape[1] % c != 0:
            raise ConfigError(f"w_h shape {self.w_h.shape} not (C, C*K)")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        for m in (self.w_h, self.w_p, self.w_out):
            if not np.isfinite(m).all():
                raise NumericError("non-finite aggregator parameter")

    @property
    def num_classes(self) -> int:
        return self.w_p.shape[0]

    @property
    def k(self) -> int:
        return self.w_h.shape[1] // self.w_p.shape[0]

    def copy(self) -> "AggregatorParams":
        return AggregatorParams(self.w_h.copy(), self.w_p.copy(),
                                self.w_out.copy(), self.activation)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 0.05
    batch_size: int = 64
    seed: int = 0
    init: str = "gcn_warm_start"
    variant: str = "full"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"need epochs >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"need lr > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"need batch_size >= 1, got {self.batch_size}")
        if self.init not in INIT_MODES:
            raise ConfigError(f"unknown init {self.init!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")


def init_params(num_classes: int, k: int, mode: str = "gcn_warm_start",
                seed: int = 0) -> AggregatorParams:
    """Fresh parameters.

    gcn_warm_start: w_h = (1/K) * (I_C kron ones(K)), w_p = I, w_out = [I | I],
    the block form under which the model equals a one-hop GCN.
    random: Glorot-uniform per matrix, seeded.
    """
    if num_classes < 2 or k < 1:
        raise ConfigError(f"need C >= 2 and K >= 1, got C={num_classes}, K={k}")
    c = num_classes
    if mode == "gcn_warm_start":
        w_h = np.kron(np.eye(c), np.ones((1, k))) / k
        w_p = np.eye(c)
        w_out = np.hstack([np.eye(c), np.eye(c)])
    elif mode == "random":
        rng = np.random.default_rng(seed)
        def draw(rows, cols):
            a = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-a, a, size=(rows, cols))
        w_h = draw(c, c * k)
        w_p = draw(c, c)
        w_out = draw(c, 2 * c)
    else:
        raise ConfigError(f"unknown init mode {mode!r}")
    return AggregatorParams(w_h=w_h, w_p=w_p, w_out=w_out)


def apply_variant_mask(params: AggregatorParams, variant: str) -> AggregatorParams:
    """Zero the weight matrix of the branch a variant removes."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    out = params.copy()
    if variant == "neigh_only":
        out.w_p[:] = 0.0
    elif variant == "prob_only":
        out.w_h[:] = 0.0
    return out


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else z


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0.0).astype(np.float64) if kind == "relu" else np.ones_like(z)


def _branches(params, h_mat, p_mat, variant):
    zh = h_mat @ params.w_h.T
    zp = p_mat @ params.w_p.T
    if variant == "neigh_only":
        zp = np.zeros_like(zp)
    elif variant == "prob_only":
        zh = np.zeros_like(zh)
    return np.hstack([zh, zp])


def pre_softmax(params: AggregatorParams, h, p, variant: str = "full") -> np.ndarray:
    """The C-vector fed to the softmax: W_out @ sigma([W_h h || W_p p])."""
    h = np.asarray(h, dtype=np.float64)[None, :]
    p = np.asarray(p, dtype=np.float64)[None, :]
    z = _branches(params, h, p, variant)
    return (_activate(z, params.activation) @ params.w_out.T)[0]


def forward(params: AggregatorParams, h, p, variant: str = "full") -> np.ndarray:
    """Trust vector t for one sample; always a valid point on the simplex."""
    logits = pre_softmax(params, h, p, variant)
    if not np.isfinite(logits).all():
        raise NumericError("non-finite aggregator pre-softmax output")
    return softmax(logits)


def forward_batch(params: AggregatorParams, h_mat, p_mat,
                  variant: str = "full") -> np.ndarray:
    z = _branches(params, np.asarray(h_mat, dtype=np.float64),
                  np.asarray(p_mat, dtype=np.float64), variant)
    logits = _activate(z, params.activation) @ params.w_out.T
    if not np.isfinite(logits).all():
        raise NumericError("non-finite aggregator pre-softmax output")
    return softmax(logits)


def loss(t: np.ndarray, y_onehot: np.ndarray) -> float:
    """Scaled NLL: -(1/C) * sum_c y_c log t_c, with t clamped at EPS_LOG."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y_onehot, dtype=np.float64)
    c = t.shape[-1]
    return float(-(y * np.log(np.maximum(t, EPS_LOG))).sum() / c)


def mean_loss(params, h_mat, p_mat, y_mat, variant: str = "full") -> float:
    t = forward_batch(params, h_mat, p_mat, variant)
    c = t.shape[1]
    picked = t[np.arange(t.shape[0]), np.asarray(y_mat).argmax(axis=1)]
    return float(-np.log(np.maximum(picked, EPS_LOG)).mean() / c)


def gradients(params: AggregatorParams, h, p, y_onehot, variant: str = "full"):
    """Exact gradients of the single-sample loss w.r.t. (w_h, w_p, w_out).

    Pre-activation gradient is (t - y)/C; ReLU contributes subgradient 0
    at 0. Variant masking forces the removed branch's gradient to zero.
    """
    gh, gp, gout = _batch_gradients(
        params,
        np.asarray(h, dtype=np.float64)[None, :],
        np.asarray(p, dtype=np.float64)[None, :],
        np.asarray(y_onehot, dtype=np.float64)[None, :],
        variant,
    )
    return gh, gp, gout


def _batch_gradients(params, h_mat, p_mat, y_mat, variant):
    """Gradients of the mean loss over the batch."""
    n, c = y_mat.shape
    z = _branches(params, h_mat, p_mat, variant)
    a = _activate(z, params.activation)
    t = softmax(a @ params.w_out.T)
    dlogits = (t - y_mat) / (c * n)
    g_out = dlogits.T @ a
    dz = (dlogits @ params.w_out) * _activate_grad(z, params.activation)
    g_h = dz[:, :c].T @ h_mat
    g_p = dz[:, c:].T @ p_mat
    if variant == "neigh_only":
        g_p = np.zeros_like(g_p)
    elif variant == "prob_only":
        g_h = np.zeros_like(g_h)
    return g_h, g_p, g_out


def train(index: ClassIndex, clf, val: Dataset, cfg: TrainConfig,
          workers: int = 1):
    """Fit the aggregator on the validation split.

    Mini-batch gradient descent on the mean loss for cfg.epochs epochs,
    deterministic given cfg.seed. Returns (params, trace) where trace[e]
    is the full-split mean loss after e epochs (trace[0] = initial). If
    descent ends above the initial loss (diverging lr), the initial
    parameters are returned instead, so the result never scores worse
    than its starting point.
    """
    if val.num_classes != index.num_classes:
        raise DataError("validation class count does not match the index")
    h_mat = neighborhood_matrix(index, val.features, workers=workers)
    p_mat = predict_proba_batch(clf, val.features, val.sample_ids)
    y_mat = one_hot(val.labels, val.num_classes)

    params = init_params(index.num_classes, index.k, cfg.init, seed=cfg.seed)
    params = apply_variant_mask(params, cfg.variant)
    initial = params.copy()

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    trace = [mean_loss(params, h_mat, p_mat, y_mat, cfg.variant)]
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(val.n)
        for start in range(0, val.n, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            g_h, g_p, g_out = _batch_gradients(
                params, h_mat[batch], p_mat[batch], y_mat[batch], cfg.variant)
            if not (np.isfinite(g_h).all() and np.isfinite(g_p).all()
                    and np.isfinite(g_out).all()):
                raise NumericError(
                    f"non-finite gradient at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}, lr {cfg.lr}")
            params.w_h -= cfg.lr * g_h
            params.w_p -= cfg.lr * g_p
            params.w_out -= cfg.lr * g_out
        params = apply_variant_mask(params, cfg.variant)
        epoch_loss = mean_loss(params, h_mat, p_mat, y_mat, cfg.variant)
        if not np.isfinite(epoch_loss):
            raise NumericError(f"non-finite loss after epoch {epoch} with lr {cfg.lr}")
        trace.append(epoch_loss)
    if trace[-1] > trace[0]:
        params = initial
    return params, np.asarray(trace)


def score(params: AggregatorParams, index: ClassIndex, clf, x,
          sample_id=None, exclude_id=None, variant: str = "full"):
    """Trust of the predicted class for one sample.

    Returns (trust, predicted class, trust vector); the scalar is the trust
    vector indexed at the classifier's argmax (lowest index on ties).
    """
    p = predict_proba_batch(clf, np.asarray(x, dtype=np.float64)[None, :],
                            None if sample_id is None else [sample_id])[0]
    h = neighborhood_vector(index, x, exclude_id)
    t = forward(params, h, p, variant)
    yhat = int(np.argmax(p))
    return float(t[yhat]), yhat, t


def score_batch(params: AggregatorParams, index: ClassIndex, clf, ds: Dataset,
                exclude_own: bool = False, variant: str = "full",
                workers: int = 1):
    """Vectorized scoring of a dataset.

    exclude_own gives leave-one-out semantics for samples whose id lives
    in the index. Returns (trust, predicted, trust matrix).
    """
    h_mat = neighborhood_matrix(index, ds.features,
                                exclude_ids=ds.sample_ids if exclude_own else None,
                                workers=workers)
    p_mat = predict_proba_batch(clf, ds.features, ds.sample_ids)
    t_mat = forward_batch(params, h_mat, p_mat, variant)
    yhat = p_mat.argmax(axis=1)
    trust = t_mat[np.arange(ds.n), yhat]
    return trust, yhat, t_mat


def complementarity_correlation(params: AggregatorParams) -> float:
    """Pearson correlation between per-class diagonal-block means of w_h and
    the diagonal of w_p. Returns nan when either side has zero variance."""
    c, k = params.num_classes, params.k
    block_means = np.array([params.w_h[i, i * k:(i + 1) * k].mean() for i in range(c)])
    diag = np.diag(params.w_p).astype(np.float64)
    a = block_means - block_means.mean()
    b = diag - diag.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        return float("nan")
    return float((a * b).sum() / denom)


# ---------------------------------------------------------------------------
# Serialization: header "C K activation", then row-major dumps of
# w_h, w_p, w_out at 17 significant digits (bit-faithful for finite doubles).


def save_params(params: AggregatorParams, path) -> None:
    lines = [f"{params.num_classes} {params.k} {params.activation}"]
    for mat in (params.w_h, params.w_p, params.w_out):
        for row in mat:
            lines.append(" ".join("%.17g" % v for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> AggregatorParams:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in (line.strip() for line in fh) if ln]
    if not lines:
        raise DataError(f"{path}: empty model file")
    head = lines[0].split()
    if len(head) != 3:
        raise DataError(f"{path}: malformed header {lines[0]!r}")
    c, k, activation = int(head[0]), int(head[1]), head[2]
    shapes = [(c, c * k), (c, c), (c, 2 * c)]
    expected_rows = 3 * c
    if len(lines) - 1 != expected_rows:
        raise DataError(f"{path}: expected {expected_rows} matrix rows, got {len(lines) - 1}")
    mats = []
    cursor = 1
    for rows, cols in shapes:
        block = np.array([[float(v) for v in lines[cursor + r].split()]
                          for r in range(rows)])
        if block.shape != (rows, cols):
            raise DataError(f"{path}: matrix block has shape {block.shape}, "
                            f"expected {(rows, cols)}")
        mats.append(block)
        cursor += rows
    return AggregatorParams(w_h=mats[0], w_p=mats[1], w_out=mats[2],
                            activation=activation)
