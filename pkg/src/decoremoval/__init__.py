"""Feature decorrelation, perturbed linear training and Newton-update data removal."""
from .core import LabeledDataset, OodSpec, SplitSpec, make_ood_split, split_dataset
from .decorrel import (DecorrelConfig, SampleWeights, column_dependence,
                       optimize_sample_weights, sample_column_maps, total_dependence,
                       weighted_cross_covariance)
from .errors import (ConvergenceError, DecoRemovalError, InputError, ModelFileError,
                     NumericalError, VersionMismatchError)
from .harness import (gen_correlated, load_csv_dataset, load_idx_images,
                      mia_threshold_attack, weighted_f1)
from .removal import (FeaturizedSet, RemovalReport, check_certified, gradient_residual,
                      load_model, newton_remove, retrain_oracle, save_model)
from .rff import RffMap, kernel_estimate, rff_transform, sample_rff_map
from .trainer import LinearModel, TrainConfig, train_classifier

__version__ = "0.1.0"

__all__ = [
    "rff_transform",
    "ConvergenceError",
    "DecoRemovalError",
    "DecorrelConfig",
    "FeaturizedSet",
    "InputError",
    "LabeledDataset",
    "LinearModel",
    "ModelFileError",
    "NumericalError",
    "OodSpec",
    "RemovalReport",
    "RffMap",
    "SampleWeights",
    "SplitSpec",
    "TrainConfig",
    "VersionMismatchError",
    "check_certified",
    "column_dependence",
    "gen_correlated",
    "gradient_residual",
    "kernel_estimate",
    "load_csv_dataset",
    "load_idx_images",
    "load_model",
    "make_ood_split",
    "mia_threshold_attack",
    "newton_remove",
    "optimize_sample_weights",
    "retrain_oracle",
    "sample_column_maps",
    "sample_rff_map",
    "save_model",
    "split_dataset",
    "total_dependence",
    "train_classifier",
    "weighted_cross_covariance",
    "weighted_f1",
]
