"""Scribble-supervised salient object detection on a small numpy autodiff engine."""

from .config import LscConfig, NetworkConfig, ObjectiveConfig, TrainConfig
from .losses import lsc_loss, partial_ce, ssc_loss, total_objective
from .metrics import e_measure, f_measure, mae
from .network import SaliencyNet

__version__ = "0.1.0"

__all__ = [
    "LscConfig", "NetworkConfig", "ObjectiveConfig", "TrainConfig",
    "SaliencyNet", "partial_ce", "lsc_loss", "ssc_loss", "total_objective",
    "f_measure", "e_measure", "mae",
]
