from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .layers import Conv2d, Linear, Module, ResidualBlock
from .model import ECFNet, forward, preprocess, reconstruction_loss
from .optim import OptimizerState, adam_step
from .trainer import ABLATION_VARIANTS, evaluate, predict, run_ablation, train

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "Conv2d",
    "Linear",
    "Module",
    "ResidualBlock",
    "ECFNet",
    "forward",
    "preprocess",
    "reconstruction_loss",
    "OptimizerState",
    "adam_step",
    "ABLATION_VARIANTS",
    "evaluate",
    "predict",
    "run_ablation",
    "train",
]
