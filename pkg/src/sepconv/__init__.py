"""Depthwise separable convolution networks in numpy, with a two-class image pipeline."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data import DatasetManifest, ManifestEntry, build_manifest, dhash64, hamming, load_image, split_dataset
from .dedup import dedup_scan
from .model import Model, ModelConfig, build_model, count_costs
from .train import TrainConfig, evaluate, fit, predict

__all__ = [
    "DatasetManifest", "ManifestEntry", "Model", "ModelConfig", "TrainConfig",
    "build_manifest", "build_model", "count_costs", "dedup_scan", "dhash64", "evaluate", "fit",
    "hamming", "load_checkpoint", "load_image", "predict", "read_checkpoint", "save_checkpoint",
    "split_dataset",
]
