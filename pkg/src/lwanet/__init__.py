"""Lightweight attention-guided segmentation network, built on a small
NumPy tensor engine with reverse-mode autodiff.

Typical use:

    from lwanet import NetworkConfig, build, TrainConfig, train, synth_shapes

    model = build(NetworkConfig(num_classes=3, input_hw=(64, 64)))
    samples = synth_shapes(8, 64, 3, seed=0)
    train(model, samples, samples, TrainConfig(epochs=10))
"""

from .analysis import CostReport, benchmark_latency, count_layer, count_model, eq1_ratio
from .autodiff import GradStore, backward, grad_check, zero_grads
from .data import AugmentConfig, SegSample, augment, load_dataset, synth_shapes
from .errors import (
    ConfigError,
    DataError,
    LwanetError,
    ShapeError,
    TrainingDiverged,
    WeightFormatError,
)
from .losses import FocalConfig, focal_loss
from .metrics import ConfusionAccumulator
from .network import (
    LWANet,
    NetworkConfig,
    build,
    import_pretrained_encoder,
    load_model,
    save_weights,
)
from .tensor import Tensor, no_grad
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "ConfigError", "ConfusionAccumulator", "CostReport",
    "DataError", "FocalConfig", "GradStore", "LWANet", "LwanetError",
    "NetworkConfig", "SegSample", "ShapeError", "Tensor", "TrainConfig",
    "TrainingDiverged", "WeightFormatError", "augment", "backward",
    "benchmark_latency", "build", "count_layer", "count_model", "eq1_ratio",
    "evaluate", "focal_loss", "grad_check", "import_pretrained_encoder",
    "load_dataset", "load_model", "no_grad", "save_weights", "synth_shapes",
    "train", "zero_grads",
]
