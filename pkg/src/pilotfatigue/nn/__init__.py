"""Minimal numpy layer library with hand-derived, gradient-checked backprop."""
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (AvgPool, BatchNorm, Conv2D, ELU, LastStep, Layer, LayerSpec, Linear, LSTM,
                     MaxPool, ShapeError, Softmax, ToSequence, layer_from_spec, softmax)
from .losses import softmax_xent
from .network import Network, NumericalError
from .optim import Adam, SGDMomentum, TrainConfig, make_optimizer

__all__ = [
    "Adam", "AvgPool", "BatchNorm", "Conv2D", "ELU", "LSTM", "LastStep", "Layer", "LayerSpec",
    "Linear", "MaxPool", "Network", "NumericalError", "SGDMomentum", "ShapeError", "Softmax",
    "ToSequence", "TrainConfig", "layer_from_spec", "load_checkpoint", "make_optimizer",
    "save_checkpoint", "softmax", "softmax_xent",
]
