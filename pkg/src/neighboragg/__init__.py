"""Post-hoc trustworthiness scoring for classifiers.

Learns an adaptive aggregation of class-wise nearest-neighbor similarities
and the classifier's probability output to score how likely each prediction
is correct, and extends the score to conformal mislabel detection with a
false-positive coverage guarantee.
"""

from .aggregator import (AggregatorParams, TrainConfig, forward,
                         forward_batch, gradients, init_params, load_params,
                         save_params, score, score_batch, train)
from .baselines import (OneHopGcn, TemperatureModel, build_onehop_gcn,
                        confidence_score, fit_temperature, trust_score,
                        verify_gcn_equivalence)
from .classifiers import (load_external_probs, predict_proba,
                          predict_proba_batch, train_logreg, train_mlp)
from .conformal import (ConformalConfig, DetectionResult, ReliabilityScore,
                        conformal_rank, coverage_harness, detect_mislabels,
                        reliability_scores)
from .dataset import (Dataset, SplitSpec, Standardizer, apply_standardizer,
                      fit_standardizer, load_csv, make_dataset,
                      make_gaussian_blobs, make_two_moons, save_csv, split)
from .metrics import (MetricReport, ScoredOutcome, average_precision, auroc,
                      evaluate)
from .neighbors import (ClassIndex, KernelConfig, build_index, knn_query,
                        neighborhood_vector, similarity_vector)

__version__ = "0.1.0"
