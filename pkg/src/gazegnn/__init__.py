"""Graph neural network classifier that fuses eye-gaze fixations into a patch graph."""
from .gaze import FixationSet, PatchGrid, ingest_gaze, rasterize_vam, time_aggregate
from .graph import GazeImageGraph, StemConfig, build_graph, knn_edges
from .model import PRESETS, GazeGnnModel, ModelConfig, init_params, model_forward
from .train import TrainConfig, evaluate, robustness_eval, train

__version__ = "0.1.0"

__all__ = [
    "FixationSet", "GazeGnnModel", "GazeImageGraph", "ModelConfig", "PRESETS", "PatchGrid", "StemConfig",
    "TrainConfig", "build_graph", "evaluate", "ingest_gaze", "init_params", "knn_edges", "model_forward",
    "rasterize_vam", "robustness_eval", "time_aggregate", "train",
]
