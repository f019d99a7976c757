"""Joint triplet autoencoder for histopathology patch retrieval, in numpy."""

from .dataset import DatasetSplit, export_patches, import_patches, ingest_rcc, synth_dataset
from .losses import LossReport, LossWeights
from .mining import TripletSet, mine_triplets
from .model import ModelConfig, ModelParams, init_params
from .retrieval import FeatureDatabase, build_index, mean_precision, query
from .trainer import TrainConfig, TrainLog, extract_features, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "FeatureDatabase",
    "LossReport",
    "LossWeights",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "TrainLog",
    "TripletSet",
    "build_index",
    "export_patches",
    "extract_features",
    "import_patches",
    "ingest_rcc",
    "init_params",
    "mean_precision",
    "mine_triplets",
    "query",
    "synth_dataset",
    "train",
]
