"""Arc features, the per-arc MLP and the training regimes."""
from .features import FeatureConfig, Standardizer, extract_features
from .mlp import Adam, MlpModel, Sgd
from .training import (PIPELINES, TrainConfig, TrainedModel, TrainResult, Workspace,
                       layer_gradient, layer_prediction, mae, predict, train, train_baseline,
                       train_pipeline)

__all__ = [
    "FeatureConfig", "Standardizer", "extract_features", "Adam", "MlpModel", "Sgd",
    "PIPELINES", "TrainConfig", "TrainedModel", "TrainResult", "Workspace", "layer_gradient",
    "layer_prediction", "mae", "predict", "train", "train_baseline", "train_pipeline",
]
