"""Spoken-command spotting toolkit.

Online audio augmentation, MFCC feature extraction, a Conformer-GRU
classifier with hand-written reverse-mode differentiation, and a
training/evaluation/inference harness, all verifiable at desk scale.
"""

__version__ = "0.1.0"

from .audio_io import LabelMap, ManifestEntry, Waveform, read_wav, write_wav
from .augment import AugmentationPolicy, ImpulseResponseSet, NoiseBank
from .features import FeatureConfig, FeatureMatrix, MaskSpec, mfcc
from .model import ModelConfig, Parameters, init_parameters, model_forward, param_count
from .training import TrainConfig, accuracy, evaluate, lr_at, nll_loss, train

__all__ = [
    "AugmentationPolicy",
    "FeatureConfig",
    "FeatureMatrix",
    "ImpulseResponseSet",
    "LabelMap",
    "ManifestEntry",
    "MaskSpec",
    "ModelConfig",
    "NoiseBank",
    "Parameters",
    "TrainConfig",
    "Waveform",
    "accuracy",
    "evaluate",
    "init_parameters",
    "lr_at",
    "mfcc",
    "model_forward",
    "nll_loss",
    "param_count",
    "read_wav",
    "train",
    "write_wav",
]
