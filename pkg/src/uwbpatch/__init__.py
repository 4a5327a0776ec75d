"""Adversarial radio noise against a 1-D CNN classifier of UWB radar echoes."""

from . import attacks, dataset, defenses, nn, signal
from .attacks import AttackConfig, Patch
from .dataset import DatasetConfig
from .defenses import ATConfig
from .estimators import CNN1DClassifier, GradientSignAttack, PassbandFilter, UniversalPatchAttack, defended_pipeline
from .signal import FrequencyBand

__all__ = [
    "attacks", "dataset", "defenses", "nn", "signal",
    "AttackConfig", "ATConfig", "DatasetConfig", "FrequencyBand", "Patch",
    "CNN1DClassifier", "GradientSignAttack", "PassbandFilter", "UniversalPatchAttack", "defended_pipeline",
]
__version__ = "0.1.0"
