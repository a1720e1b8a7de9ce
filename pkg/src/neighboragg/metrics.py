"""Misclassification-detection metrics: AUROC, APC, APM.

AUROC treats correct predictions as positives and uses the tie-corrected
Mann-Whitney estimator. APC is un-interpolated average precision with
correct predictions as positives, ranked by descending trust; APM flips
both: misclassifications are positives, ranked by ascending trust so the
least-trusted samples come first. Ties group by ascending original index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .classifiers import predict_proba_batch
from .dataset import Dataset
from .errors import DataError, MetricUndefinedError


@dataclass(frozen=True)
class ScoredOutcome:
    score: float
    correct: bool


def _as_arrays(outcomes):
    scores = np.array([o.score for o in outcomes], dtype=np.float64)
    correct = np.array([o.correct for o in outcomes], dtype=bool)
    if scores.size == 0:
        raise MetricUndefinedError("no outcomes")
    if not np.isfinite(scores).all():
        raise DataError("scores must be finite")
    return scores, correct


def auroc(outcomes) -> float:
    """Mann-Whitney U over (correct, incorrect) pairs, ties counted 0.5."""
    scores, correct = _as_arrays(outcomes)
    n_pos = int(correct.sum())
    n_neg = int((~correct).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"AUROC undefined: {n_pos} correct vs {n_neg} incorrect outcomes")
    ranks = rankdata(scores)  # average ranks on ties
    u = ranks[correct].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(outcomes, positive_is_correct: bool) -> float:
    """Un-interpolated AP: mean over positives of precision at their rank.

    Ranking is by descending score when positives are the correct
    predictions, ascending otherwise (low trust should surface errors
    first). Equal scores keep ascending input order.
    """
    scores, correct = _as_arrays(outcomes)
    positives = correct if positive_is_correct else ~correct
    if not positives.any():
        raise MetricUndefinedError("average precision undefined: no positives")
    key = -scores if positive_is_correct else scores
    order = np.lexsort((np.arange(scores.size), key))
    hits = positives[order]
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    precisions = cum_hits[hits] / ranks[hits]
    return float(precisions.mean())


@dataclass(frozen=True)
class MetricReport:
    auc: float
    apc: float
    apm: float
    accuracy: float
    n: int
    n_correct: int


def evaluate(scorer, test: Dataset, clf) -> MetricReport:
    """Score every test sample and assemble the three metrics plus accuracy.

    scorer is a callable (features, probs, predicted, ids) -> scores with
    higher meaning more trusted. Samples are processed in index order.
    """
    probs = predict_proba_batch(clf, test.features, test.sample_ids)
    yhat = probs.argmax(axis=1)
    correct = yhat == test.labels
    scores = np.asarray(scorer(test.features, probs, yhat, test.sample_ids),
                        dtype=np.float64)
    if scores.shape != (test.n,):
        raise DataError(f"scorer returned shape {scores.shape}, expected ({test.n},)")
    outcomes = [ScoredOutcome(float(s), bool(c)) for s, c in zip(scores, correct)]
    return MetricReport(
        auc=auroc(outcomes),
        apc=average_precision(outcomes, positive_is_correct=True),
        apm=average_precision(outcomes, positive_is_correct=False),
        accuracy=float(correct.mean()),
        n=test.n,
        n_correct=int(correct.sum()),
    )


METRIC_FIELDS = ("auc", "apc", "apm", "accuracy")


def aggregate_reports(reports):
    """Mean and population std per metric across seeds."""
    if not reports:
        raise MetricUndefinedError("nothing to aggregate")
    means, stds = {}, {}
    for name in METRIC_FIELDS:
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        means[name] = float(vals.mean())
        stds[name] = float(vals.std())
    return means, stds


def write_metric_csv(path, values: dict, stds: dict | None = None) -> None:
    """`metric,value,std` rows; std column empty for single runs."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value", "std"])
        for name, value in values.items():
            std = "" if stds is None else "%.12g" % stds[name]
            writer.writerow([name, "%.12g" % value, std])


def write_scores_csv(path, ids, predicted, labels, scores, correct) -> None:
    """Per-sample export for external plotting: id,predicted,label,score,correct."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "predicted", "label", "score", "correct"])
        for i in range(len(ids)):
            writer.writerow([int(ids[i]), int(predicted[i]), int(labels[i]),
                             "%.17g" % scores[i], "true" if correct[i] else "false"])
