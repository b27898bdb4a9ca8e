"""Joint blind image restoration and classification via cycle-consistent
adversarial training with polynomial operational layers."""

from .autodiff import TensorNode, no_grad
from .layers import OperationalFilterParams, init_operational, operational_conv2d, \
    operational_transposed_conv2d
from .losses import CyclePass, LossWeights
from .models import (DiscriminatorConfig, GeneratorConfig, GeneratorOutput,
                     build_discriminator, build_generator)
from .optim import AdamState, LrSchedule, OptimizerConfig, adam_step, lr_at
from .training import TrainConfig, TrainState, init_state, train, train_step

__all__ = [
    "TensorNode", "no_grad",
    "OperationalFilterParams", "init_operational", "operational_conv2d",
    "operational_transposed_conv2d",
    "CyclePass", "LossWeights",
    "DiscriminatorConfig", "GeneratorConfig", "GeneratorOutput",
    "build_discriminator", "build_generator",
    "AdamState", "LrSchedule", "OptimizerConfig", "adam_step", "lr_at",
    "TrainConfig", "TrainState", "init_state", "train", "train_step",
]
