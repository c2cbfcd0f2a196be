from .model import PRESETS, ArchitecturePreset, ConvBlock, DenseSpec, VGGNet, get_preset
from .ops import BatchNormState, ShapeError
from .optim import SGD, StepDecay

__all__ = [
    "PRESETS", "ArchitecturePreset", "ConvBlock", "DenseSpec", "VGGNet", "get_preset",
    "BatchNormState", "ShapeError", "SGD", "StepDecay",
]
