"""Learnable randomness injection for interpretable point-cloud models.

Two interpreter variants wrap a distance-based message-passing classifier:
an existence interpreter that learns per-point keep probabilities, and a
location interpreter that learns per-point Gaussian perturbation covariances
whose geometry exposes which spatial directions matter.
"""

from .analysis import (angle_to_velocity, eigen_ratio, ellipse_summary,
                       field_strength_fit, in_plane, principal_direction,
                       sigma_angle_stats)
from .baselines import attribution_scores, grad_gam, grad_geo
from .bernoulli import BernoulliLRINet, bern_kl, rank_existence, sample_mask
from .config import ExperimentConfig, RunRecord, derive_seed, load_config
from .data import PointCloud, Sample, center_and_rescale, choose_rescale_constant
from .estimators import (LRIBernoulli, LRIGaussian, PointCloudClassifier,
                         load_model, save_model)
from .exceptions import (ConfigError, GenerationError, LRIError,
                         RecordParseError, ValidationError)
from .gaussian import (GaussianLRINet, assemble_covariance, gauss_kl,
                       rank_location, sample_perturbation)
from .graph import SpatialGraph, build_knn, build_soft_graph
from .io import load_samples, read_scores, save_samples, write_scores
from .metrics import (MetricReport, interpretation_report, precision_at_m,
                      roc_auc)
from .synth import (HelixParams, MotifParams, generate_helix_dataset,
                    generate_motif_dataset, make_splits)
from .train import PreparedDataset, TrainOutput, train_model

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "RunRecord", "derive_seed", "load_config",
    "PointCloud", "Sample", "center_and_rescale", "choose_rescale_constant",
    "LRIError", "ValidationError", "ConfigError", "RecordParseError",
    "GenerationError",
    "SpatialGraph", "build_knn", "build_soft_graph",
    "BernoulliLRINet", "bern_kl", "sample_mask", "rank_existence",
    "GaussianLRINet", "assemble_covariance", "sample_perturbation", "gauss_kl",
    "rank_location",
    "in_plane", "principal_direction", "angle_to_velocity", "eigen_ratio",
    "ellipse_summary", "field_strength_fit", "sigma_angle_stats",
    "grad_geo", "grad_gam", "attribution_scores",
    "HelixParams", "MotifParams", "generate_helix_dataset",
    "generate_motif_dataset", "make_splits",
    "roc_auc", "precision_at_m", "interpretation_report", "MetricReport",
    "PreparedDataset", "TrainOutput", "train_model",
    "PointCloudClassifier", "LRIBernoulli", "LRIGaussian", "save_model",
    "load_model",
    "__version__",
]
