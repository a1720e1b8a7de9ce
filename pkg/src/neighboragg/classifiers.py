"""Base classifiers whose predictions get audited, plus ingestion of
externally produced probability vectors.

Trained kinds are deliberately plain: multinomial logistic regression by
full-batch gradient descent, and a small ReLU MLP by mini-batch gradient
descent. Both are deterministic given their seed and expose
loss_and_grads so tests can finite-difference them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError, MissingColumnError, NumericError

EPS_LOG = 1e-12
SIMPLEX_TOL = 1e-6


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; 1-D input treated as a single row."""
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 1
    z2 = np.atleast_2d(z)
    shifted = z2 - z2.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if squeeze else out


def is_on_simplex(v: np.ndarray, tol: float = SIMPLEX_TOL) -> bool:
    v = np.asarray(v, dtype=np.float64)
    return (np.isfinite(v).all() and (v >= 0.0).all() and (v <= 1.0).all()
            and abs(float(v.sum()) - 1.0) <= tol)


def as_probabilities(v) -> np.ndarray:
    """Coerce a vector to the probability simplex.

    Vectors already on the simplex (within SIMPLEX_TOL) pass through
    unchanged; anything else is treated as logits and softmax-normalized.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DataError(f"expected a vector, got shape {v.shape}")
    return v if is_on_simplex(v) else softmax(v)


def predicted_class(p: np.ndarray) -> int:
    """Argmax with lowest-index tie-breaking."""
    return int(np.argmax(p))


def one_hot(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _check_finite_loss(loss: float, where: str):
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at {where}")


# ---------------------------------------------------------------------------
# Logistic regression


@dataclass(eq=False)
class LogisticRegressionClassifier:
    weights: np.ndarray  # (D, C)
    bias: np.ndarray  # (C,)

    kind = "logistic_regression"

    @property
    def input_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    def predict_proba_matrix(self, x: np.ndarray) -> np.ndarray:
        return softmax(x @ self.weights + self.bias)

    def loss_and_grads(self, x: np.ndarray, y_onehot: np.ndarray):
        """Mean cross-entropy and its gradients w.r.t. (weights, bias)."""
        n = x.shape[0]
        probs = self.predict_proba_matrix(x)
        loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y_onehot.argmax(axis=1)], EPS_LOG)))
        dlogits = (probs - y_onehot) / n
        return loss, x.T @ dlogits, dlogits.sum(axis=0)


def train_logreg(train: Dataset, max_iter: int = 5000, lr: float = 0.5,
                 seed: int = 0) -> LogisticRegressionClassifier:
    """Fit multinomial logistic regression by full-batch gradient descent.

    Weights start at zero, so the seed only fixes the API shape shared with
    train_mlp; the fit is deterministic regardless.
    """
    del seed  # zero init leaves nothing to randomize
    if max_iter < 0:
        raise ConfigError(f"max_iter must be >= 0, got {max_iter}")
    if lr <= 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    clf = LogisticRegressionClassifier(
        weights=np.zeros((train.dim, train.num_classes)),
        bias=np.zeros(train.num_classes),
    )
    y = one_hot(train.labels, train.num_classes)
    for it in range(max_iter):
        loss, gw, gb = clf.loss_and_grads(train.features, y)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at iteration {it} with lr {lr}")
        clf.weights -= lr * gw
        clf.bias -= lr * gb
    return clf


# ---------------------------------------------------------------------------
# MLP


@dataclass(eq=False)
class MlpClassifier:
    layers: list  # [(W, b), ...] applied left to right, ReLU between

    kind = "mlp"

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[1]

    def _forward(self, x: np.ndarray):
        """Returns (activations, pre-activations) per layer for backprop."""
        acts = [x]
        pre = []
        h = x
        for i, (w, b) in enumerate(self.layers):
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < len(self.layers) - 1 else z
            acts.append(h)
        return acts, pre

    def predict_proba_matrix(self, x: np.ndarray) -> np.ndarray:
        acts, _ = self._forward(x)
        return softmax(acts[-1])

    def loss_and_grads(self, x: np.ndarray, y_onehot: np.ndarray):
        """Mean cross-entropy and gradients per layer, via backprop.

        ReLU uses subgradient 0 at 0.
        """
        n = x.shape[0]
        acts, pre = self._forward(x)
        probs = softmax(acts[-1])
        loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y_onehot.argmax(axis=1)], EPS_LOG)))
        grads = [None] * len(self.layers)
        delta = (probs - y_onehot) / n
        for i in range(len(self.layers) - 1, -1, -1):
            w, _ = self.layers[i]
            grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ w.T) * (pre[i - 1] > 0.0)
        return loss, grads


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def train_mlp(train: Dataset, hidden=(200, 70), epochs: int = 100, lr: float = 0.1,
              batch_size: int = 64, seed: int = 0) -> MlpClassifier:
    """Fit a ReLU MLP (D -> hidden -> C) with mini-batch gradient descent.

    Glorot-uniform init and per-epoch shuffles both come from the seed, so
    identical seeds give bit-identical parameters.
    """
    if any(h < 1 for h in hidden):
        raise ConfigError(f"hidden layer sizes must be >= 1, got {hidden}")
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    if lr <= 0 or batch_size < 1:
        raise ConfigError(f"need lr > 0 and batch_size >= 1, got {lr}, {batch_size}")
    rng = np.random.default_rng(seed)
    sizes = [train.dim, *hidden, train.num_classes]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        layers.append((_glorot(rng, fan_in, fan_out), np.zeros(fan_out)))
    clf = MlpClassifier(layers=layers)
    y = one_hot(train.labels, train.num_classes)
    for epoch in range(epochs):
        perm = rng.permutation(train.n)
        for start in range(0, train.n, batch_size):
            batch = perm[start:start + batch_size]
            loss, grads = clf.loss_and_grads(train.features[batch], y[batch])
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size}, lr {lr}")
            for (w, b), (gw, gb) in zip(clf.layers, grads):
                w -= lr * gw
                b -= lr * gb
    return clf


# ---------------------------------------------------------------------------
# Externally produced probabilities


@dataclass(eq=False)
class ExternalProbsClassifier:
    """Probability table keyed by sample id, for model-agnostic use."""

    table: dict  # id -> (C,) probability vector

    kind = "external"

    @property
    def num_classes(self) -> int:
        first = next(iter(self.table.values()))
        return first.shape[0]

    def lookup(self, sample_id) -> np.ndarray:
        if sample_id is None or int(sample_id) not in self.table:
            raise DataError(f"no external probabilities for sample id {sample_id}")
        return self.table[int(sample_id)]


def load_external_probs(path, num_classes: int) -> ExternalProbsClassifier:
    """Read a CSV with header id,p0,...,p{C-1}.

    Rows off the simplex by more than SIMPLEX_TOL are renormalized when all
    entries are nonnegative; rows with a negative entry or zero sum are
    rejected, naming the offending id.
    """
    expected = ["id"] + [f"p{c}" for c in range(num_classes)]
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if header != expected:
        raise MissingColumnError(f"{path}: header {header} != expected {expected}")
    table = {}
    for row in rows[1:]:
        sid = int(row[0])
        p = np.array([float(v) for v in row[1:]], dtype=np.float64)
        if (p < 0).any():
            raise DataError(f"negative probability entry for id {sid}")
        total = float(p.sum())
        if total == 0.0:
            raise DataError(f"probability row sums to 0 for id {sid}")
        if abs(total - 1.0) > SIMPLEX_TOL:
            p = p / total
        p.setflags(write=False)
        table[sid] = p
    if not table:
        raise DataError(f"{path}: no probability rows")
    return ExternalProbsClassifier(table=table)


# ---------------------------------------------------------------------------
# Unified prediction surface


def predict_proba(clf, x, sample_id=None) -> np.ndarray:
    """Probability vector for one sample.

    Trained kinds evaluate the model on x (dimension-checked); the external
    kind ignores x and looks up sample_id. Output always lands on the
    simplex; off-simplex stored vectors would be coerced via softmax.
    """
    if isinstance(clf, ExternalProbsClassifier):
        return as_probabilities(clf.lookup(sample_id))
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (clf.input_dim,):
        raise DataError(f"expected feature vector of dimension {clf.input_dim}, "
                        f"got shape {x.shape}")
    return clf.predict_proba_matrix(x[None, :])[0]


def predict_proba_batch(clf, x: np.ndarray, sample_ids=None) -> np.ndarray:
    """(N, C) probabilities; external kind requires aligned sample_ids."""
    if isinstance(clf, ExternalProbsClassifier):
        if sample_ids is None:
            raise DataError("external classifier needs sample ids")
        return np.vstack([clf.lookup(sid) for sid in sample_ids])
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != clf.input_dim:
        raise DataError(f"expected (N, {clf.input_dim}) features, got shape {x.shape}")
    return clf.predict_proba_matrix(x)
