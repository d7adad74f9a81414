"""Robustness measurements for dense classifiers: margins, co-margins,
Lipschitz intervals, margin-aware bounds and concentration tests."""

from .nn import Network, TrainConfig, init_network, train
from .data import LabeledDataset, MeasureSpec, gen_gaussian_toy
from .margin import AttackConfig, MeasurementError, class_stability
from .lipschitz import co_stability, lipschitz_interval, normalized_costability
from .bounds import BoundInputs, BoundResult
from .harness import SweepConfig, run_sweep

__version__ = "0.1.0"

__all__ = [
    "Network", "TrainConfig", "init_network", "train",
    "LabeledDataset", "MeasureSpec", "gen_gaussian_toy",
    "AttackConfig", "MeasurementError", "class_stability",
    "co_stability", "lipschitz_interval", "normalized_costability",
    "BoundInputs", "BoundResult", "SweepConfig", "run_sweep",
]
