"""Multilevel sequence-to-sequence graph-convolutional GRU traffic forecasting."""
from .baselines import HAModel, VARModel, ha_predict, var_fit, var_predict
from .graph import RoadGraph, Segment, build_adjacency_from_segments, normalize_propagation
from .metrics import evaluate, mae, mape, rmse
from .pipeline import PipelineConfig, SpeedMatrix, run_pipeline
from .seq2seq import MLS2SConfig, MLS2SParams, forward, init_params, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "HAModel", "MLS2SConfig", "MLS2SParams", "PipelineConfig", "RoadGraph", "Segment", "SpeedMatrix",
    "TrainConfig", "VARModel", "build_adjacency_from_segments", "evaluate", "forward", "ha_predict",
    "init_params", "load_checkpoint", "mae", "mape", "normalize_propagation", "rmse", "run_pipeline",
    "save_checkpoint", "train", "var_fit", "var_predict",
]
