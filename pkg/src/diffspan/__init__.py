"""diffspan: retrieve the temporal segment of a feature sequence matching a
query by iteratively denoising randomly initialized spans."""

from .data import (
    Corpus,
    MomentAnnotation,
    SplitSpec,
    SyntheticConfig,
    build_len_split,
    build_mom_split,
    generate_corpus,
    load_corpus,
    save_corpus,
)
from .denoiser import PredictionSet
from .engine import EvalReport, TrainConfig, TrainResult, eval_metrics, infer, train
from .estimator import DiffusionMomentRetriever
from .objective import LossWeights

__all__ = [
    "Corpus",
    "DiffusionMomentRetriever",
    "EvalReport",
    "LossWeights",
    "MomentAnnotation",
    "PredictionSet",
    "SplitSpec",
    "SyntheticConfig",
    "TrainConfig",
    "TrainResult",
    "build_len_split",
    "build_mom_split",
    "eval_metrics",
    "generate_corpus",
    "infer",
    "load_corpus",
    "save_corpus",
    "train",
]

__version__ = "0.1.0"
