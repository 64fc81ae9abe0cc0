"""Masked-autoencoder network, pre-training loop, checkpoints and few-shot heads."""
from .checkpoint import CheckpointFormatError, ModelCheckpoint, UnsupportedVersionError, load, save
from .config import ConfigError, ModelConfig, TrainConfig
from .estimators import HMAEEncoder, HMAEPretrainer, finetune_classifier, finetune_regressor
from .heads import FewShotEnergyRegressor, FewShotPhaseClassifier
from .network import Batch, HMAENetwork, collate
from .training import NumericalAbort, loss_pretrain, pretrain

__all__ = [
    "Batch", "CheckpointFormatError", "ConfigError", "FewShotEnergyRegressor", "FewShotPhaseClassifier",
    "HMAEEncoder", "HMAENetwork", "HMAEPretrainer", "ModelCheckpoint", "ModelConfig", "NumericalAbort",
    "TrainConfig", "UnsupportedVersionError", "collate", "finetune_classifier", "finetune_regressor", "load",
    "loss_pretrain", "pretrain", "save",
]
