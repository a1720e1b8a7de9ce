"""Conformal mislabel detection with a noise-adjusted threshold.

Each labeled sample gets a signed reliability score

    r = (2 * [predicted == label] - 1) * t_label

where t is the aggregator's trust vector indexed at the *label* (not the
prediction). Scores are sorted non-increasing and the threshold tau is the
B-th largest with

    B = ceil((N + 1) (1 - alpha) + alpha N p)

for a mislabeling-rate estimate p. Samples with r <= tau are flagged. For
a fresh correctly-labeled point, P(r <= tau) <= alpha; the coverage
harness measures that rate empirically on synthetic data with injected
label noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import seeding
from .aggregator import AggregatorParams, TrainConfig, forward_batch, train
from .classifiers import predict_proba_batch, train_logreg
from .dataset import Dataset, inject_label_noise, make_dataset
from .errors import ConfigError
from .neighbors import ClassIndex, KernelConfig, build_index, neighborhood_matrix


@dataclass(frozen=True)
class ReliabilityScore:
    sample_id: int
    label: int
    predicted: int
    r: float


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float
    p: float = 0.0  # mislabeling-rate estimate

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"mislabeling rate must be in [0, 1), got {self.p}")


@dataclass(frozen=True)
class DetectionResult:
    threshold: float  # tau
    rank: int  # B, 1-based position of tau among sorted scores
    flagged: tuple  # ReliabilityScore entries with r <= tau, ascending id
    sorted_scores: tuple  # all scores, non-increasing r, ties by ascending id


def reliability_scores(params: AggregatorParams, index: ClassIndex, clf,
                       ds: Dataset, variant: str = "full",
                       workers: int = 1):
    """Signed label-trust per sample.

    Samples whose id lives in the index are scored leave-one-out: their own
    ids are passed as exclusions so a sample never supports itself.
    """
    h_mat = neighborhood_matrix(index, ds.features, exclude_ids=ds.sample_ids,
                                workers=workers)
    p_mat = predict_proba_batch(clf, ds.features, ds.sample_ids)
    t_mat = forward_batch(params, h_mat, p_mat, variant)
    yhat = p_mat.argmax(axis=1)
    t_label = t_mat[np.arange(ds.n), ds.labels]
    sign = np.where(yhat == ds.labels, 1.0, -1.0)
    r = sign * t_label
    return [
        ReliabilityScore(int(ds.sample_ids[i]), int(ds.labels[i]),
                         int(yhat[i]), float(r[i]))
        for i in range(ds.n)
    ]


def conformal_rank(n: int, cfg: ConformalConfig) -> int:
    """B = ceil((N+1)(1-alpha) + alpha N p), computed exactly.

    Fraction arithmetic makes the ceiling immune to float rounding at
    integer boundaries. alpha must exceed 1/(N+1) so that B <= N; large p
    can still push B past N, which is rejected.
    """
    if n < 1:
        raise ConfigError(f"need at least one scored sample, got {n}")
    if not 1.0 / (n + 1) < cfg.alpha < 1.0:
        raise ConfigError(
            f"alpha={cfg.alpha} outside (1/(N+1), 1) = ({1.0 / (n + 1):.6g}, 1) for N={n}")
    a = Fraction(cfg.alpha)
    p = Fraction(cfg.p)
    rank = math.ceil((n + 1) * (1 - a) + a * n * p)
    if rank > n:
        raise ConfigError(
            f"rank B={rank} exceeds N={n}; lower the mislabeling rate p or raise alpha")
    return int(rank)


def detect_mislabels(scores, cfg: ConformalConfig) -> DetectionResult:
    """Fit the threshold on the given scores and flag everything at or below it."""
    scores = list(scores)
    b = conformal_rank(len(scores), cfg)
    ordered = sorted(scores, key=lambda s: (-s.r, s.sample_id))
    tau = ordered[b - 1].r
    flagged = tuple(sorted((s for s in scores if s.r <= tau),
                           key=lambda s: s.sample_id))
    return DetectionResult(threshold=float(tau), rank=b, flagged=flagged,
                           sorted_scores=tuple(ordered))


def estimate_mislabeling_rate(given_labels, audited_labels) -> float:
    """Fraction of a manually audited subset whose given label was wrong."""
    given = np.asarray(given_labels)
    audited = np.asarray(audited_labels)
    if given.size == 0 or given.shape != audited.shape:
        raise ConfigError("audit needs aligned, nonempty label arrays")
    return float((given != audited).mean())


# ---------------------------------------------------------------------------
# Empirical coverage harness


@dataclass(frozen=True)
class CoverageResult:
    false_flag_rate: float  # fraction of fresh correct points with r <= tau
    flagged: int
    trials: int
    binomial_se: float
    threshold: float
    rank: int


def _mixture_sample(rng, centers, scale, n):
    """i.i.d. draws: uniform class label, isotropic Gaussian features."""
    c, d = centers.shape
    labels = rng.integers(0, c, size=n)
    features = centers[labels] + rng.normal(scale=scale, size=(n, d))
    return features, labels


def coverage_harness(seed: int, n_calibration: int, noise_rate: float,
                     alpha: float, trials: int, num_classes: int = 3,
                     scale: float = 1.6) -> CoverageResult:
    """Measure the false-flag rate on fresh correctly-labeled points.

    One run: sample a Gaussian-mixture dataset, train the scoring pipeline
    on clean train/val splits, inject exactly floor(noise_rate * N) uniform
    relabelings into an i.i.d. calibration set of size N, fit the threshold
    there (with p = noise_rate), then score `trials` fresh clean points and
    count how many fall at or below the threshold. The guarantee under test
    bounds that rate by alpha.
    """
    if trials < 1 or n_calibration < 2:
        raise ConfigError("need trials >= 1 and n_calibration >= 2")
    centers = np.zeros((num_classes, 3))
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers[:, 0] = 2.2 * np.cos(angles)
    centers[:, 1] = 2.2 * np.sin(angles)

    data_rng = seeding.child_rng(seed, seeding.SYNTH)
    x_tr, y_tr = _mixture_sample(data_rng, centers, scale, 1200)
    x_val, y_val = _mixture_sample(data_rng, centers, scale, 600)
    x_cal, y_cal = _mixture_sample(data_rng, centers, scale, n_calibration)
    x_new, y_new = _mixture_sample(data_rng, centers, scale, trials)

    train_ds = make_dataset(x_tr, y_tr, num_classes)
    val_ds = make_dataset(x_val, y_val, num_classes,
                          sample_ids=np.arange(600) + 1_000_000)
    cal_ds = make_dataset(x_cal, y_cal, num_classes,
                          sample_ids=np.arange(n_calibration) + 2_000_000)
    cal_ds, _ = inject_label_noise(cal_ds, noise_rate,
                                   seed=seeding.child_seed(seed, seeding.NOISE))
    new_ds = make_dataset(x_new, y_new, num_classes,
                          sample_ids=np.arange(trials) + 3_000_000)

    clf = train_logreg(train_ds, max_iter=300, lr=0.5,
                       seed=seeding.child_seed(seed, seeding.CLASSIFIER))
    index = build_index(train_ds, KernelConfig(), k=5)
    params, _ = train(index, clf, val_ds,
                      TrainConfig(epochs=30, lr=0.05, batch_size=64,
                                  seed=seeding.child_seed(seed, seeding.AGGREGATOR)))

    cal_scores = reliability_scores(params, index, clf, cal_ds)
    detection = detect_mislabels(cal_scores, ConformalConfig(alpha=alpha, p=noise_rate))
    new_scores = reliability_scores(params, index, clf, new_ds)
    flagged = sum(1 for s in new_scores if s.r <= detection.threshold)
    rate = flagged / trials
    se = math.sqrt(max(rate * (1.0 - rate), 1e-12) / trials)
    return CoverageResult(false_flag_rate=rate, flagged=flagged, trials=trials,
                          binomial_se=se, threshold=detection.threshold,
                          rank=detection.rank)
