"""Multi-level limit order book forecasting with compound attribute embeddings."""

from .config import ExperimentConfig, load_config
from .data import LobDataset, SynthParams, parse_lobster, resample, synth_dataset
from .embedding import Embedding, EmbeddingConfig
from .model import Forecaster, LinearBaseline, ModelConfig, build_model
from .objective import structure_loss, total_loss
from .trainer import TrainConfig, train
from .transforms import fit_pipeline, pipeline_forward, pipeline_inverse

__version__ = "0.1.0"

__all__ = [
    "Embedding", "EmbeddingConfig", "ExperimentConfig", "Forecaster", "LinearBaseline",
    "LobDataset", "ModelConfig", "SynthParams", "TrainConfig", "build_model",
    "fit_pipeline", "load_config", "parse_lobster", "pipeline_forward", "pipeline_inverse",
    "resample", "structure_loss", "synth_dataset", "total_loss", "train",
]
