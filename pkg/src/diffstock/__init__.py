"""diffstock: dynamic stock graphs, learnable graph diffusion, and a
decoupled two-stream classifier for next-trading-day movement prediction."""

__version__ = "0.1.0"

from .autodiff import Tensor, grad_check
from .data import AlignedHistory, SplitSpec, SyntheticMarketSpec, synth_market
from .evaluation import EvalReport, metrics
from .graph import EntropyConfig, build_adjacency, entropy, joint_entropy, signal_energy
from .model import Model, ModelConfig
from .training import Adam, TrainConfig, train

__all__ = [
    "Tensor", "grad_check",
    "AlignedHistory", "SplitSpec", "SyntheticMarketSpec", "synth_market",
    "EvalReport", "metrics",
    "EntropyConfig", "build_adjacency", "entropy", "joint_entropy", "signal_energy",
    "Model", "ModelConfig", "Adam", "TrainConfig", "train",
]
