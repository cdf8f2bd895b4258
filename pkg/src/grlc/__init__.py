"""Learned anisotropic-Gaussian space partitioning for ANN search.

Train a set of full-covariance Gaussians to cover a vector dataset, refine
them by split/clone/prune, quantize each Gaussian's bucket with local PCA
plus hyperspherical bins, and answer kNN / majority-vote queries by probing
the closest bins of the closest Gaussians.
"""

from .core import (GaussianParams, GaussianSet, HyperParams, InvalidParameterError,
                   VectorSet, mahalanobis, mahalanobis_batch, materialize_cholesky)
from .dataio import (FormatError, LabeledDataset, load_fvecs, load_ivecs,
                     save_fvecs, save_ivecs, synth_mixture)
from .evaluation import (EvalReport, GroundTruth, bench_sweep, brute_force_knn,
                         classification_eval, recall_10_at_10, recall_at_1)
from .index import Bucket, Index, build_index, load_index, save_index
from .query import QueryBudget, QueryResult, classify, search
from .training import TrainState, fit

__version__ = "0.1.0"

__all__ = [
    "Bucket", "EvalReport", "FormatError", "GaussianParams", "GaussianSet",
    "GroundTruth", "HyperParams", "Index", "InvalidParameterError",
    "LabeledDataset", "QueryBudget", "QueryResult", "TrainState", "VectorSet",
    "bench_sweep", "brute_force_knn", "build_index", "classification_eval",
    "classify", "fit", "load_fvecs", "load_index", "load_ivecs", "mahalanobis",
    "mahalanobis_batch", "materialize_cholesky", "recall_10_at_10", "recall_at_1",
    "save_fvecs", "save_index", "save_ivecs", "search", "synth_mixture",
]
