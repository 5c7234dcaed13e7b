"""Monotonicity-aware CTR training: counterfactual sample synthesis with contrastive hinge losses."""

__version__ = "0.1.0"

from .backbones import Model, ModelSpec, build_model, predict
from .dataio import Dataset, SyntheticSpec, generate_synthetic, load_checkpoint, load_csv, save_checkpoint
from .features import FeatureSchema, FeatureSpace, FieldSpec, fit_features
from .importance import ImportanceProfile, ShapleyConfig, compute_importance
from .metrics import MetricsReport, auc, evaluate, gauc, mono_rate, rela_impr
from .trainer import TrainConfig, train

__all__ = [
    "Dataset",
    "FeatureSchema",
    "FeatureSpace",
    "FieldSpec",
    "ImportanceProfile",
    "MetricsReport",
    "Model",
    "ModelSpec",
    "ShapleyConfig",
    "SyntheticSpec",
    "TrainConfig",
    "auc",
    "build_model",
    "compute_importance",
    "evaluate",
    "fit_features",
    "gauc",
    "generate_synthetic",
    "load_checkpoint",
    "load_csv",
    "mono_rate",
    "predict",
    "rela_impr",
    "save_checkpoint",
    "train",
]
