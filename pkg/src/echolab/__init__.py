"""Echo-chamber debiasing on synthetic multi-bias data."""

from .data import LabeledDataset, SyntheticSpec, TrainView, generate
from .training import TrainConfig, TrainResult, train

__all__ = [
    "LabeledDataset",
    "SyntheticSpec",
    "TrainConfig",
    "TrainResult",
    "TrainView",
    "generate",
    "train",
]
__version__ = "0.1.0"
