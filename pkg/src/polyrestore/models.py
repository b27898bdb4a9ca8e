"""Generator and discriminator networks.

The generator is deliberately compact: four operational layers (two stride-2
downsampling convolutions, two stride-2 transposed convolutions) plus one
dense layer. It performs two tasks in a single inference:

  Output I  -- the translated image, tanh-bounded to [-1, 1];
  Output II -- class probabilities, read from the innermost feature map
               through global average pooling, one dense layer and softmax.

The discriminator is a small patch critic: three stride-2 operational stages
followed by a linear 1-channel projection, producing an unbounded real mask
(least-squares targets, so no sigmoid). A 64x64 input yields an 8x8 mask.

``use_operational=False`` swaps every operational layer for its plain
convolutional Q=1 form and the generator activations for ReLU, which is the
compact CNN baseline configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import TensorNode
from .layers import (init_operational, operational_conv2d,
                     operational_transposed_conv2d)


@dataclass(frozen=True)
class GeneratorConfig:
    q: int = 3
    base_channels: int = 64
    num_classes: int = 2
    image_size: tuple = (64, 64)
    in_channels: int = 1
    use_operational: bool = True
    kernel: int = 3

    def __post_init__(self):
        h, w = self.image_size
        if h % 4 != 0 or w % 4 != 0:
            raise ValueError(f"image size must be divisible by 4, got {self.image_size}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.q < 1:
            raise ValueError(f"polynomial order must be >= 1, got {self.q}")

    @property
    def effective_q(self):
        return self.q if self.use_operational else 1


@dataclass(frozen=True)
class DiscriminatorConfig:
    q: int = 3
    base_channels: int = 64
    in_channels: int = 1
    use_operational: bool = True
    kernel: int = 3

    @property
    def effective_q(self):
        return self.q if self.use_operational else 1


@dataclass
class GeneratorOutput:
    """restored: same shape as the input, every pixel in [-1, 1];
    class_probs: [N, num_classes], rows on the simplex."""
    restored: TensorNode
    class_probs: TensorNode


class _Affine:
    """Instance-norm affine parameters for one layer."""

    def __init__(self, channels, dtype=np.float32):
        self.gain = TensorNode(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = TensorNode(np.zeros(channels, dtype=dtype), requires_grad=True)

    def tensors(self):
        return [self.gain, self.shift]


class Generator:
    """Joint translate-and-classify network (see module docstring)."""

    def __init__(self, config: GeneratorConfig, rng):
        self.config = config
        q = config.effective_q
        c1 = config.base_channels
        c2 = 4 * config.base_channels
        k = config.kernel
        self.enc1 = init_operational(config.in_channels, c1, k, q, rng)
        self.enc2 = init_operational(c1, c2, k, q, rng)
        self.dec1 = init_operational(c2, c1, k, q, rng)
        self.dec2 = init_operational(c1, config.in_channels, k, q, rng)
        self.norm1 = _Affine(c1)
        self.norm2 = _Affine(c2)
        self.norm3 = _Affine(c1)
        limit = np.sqrt(3.0 / c2)
        self.cls_weight = TensorNode(
            rng.uniform(-limit, limit, size=(c2, config.num_classes)).astype(np.float32),
            requires_grad=True)
        self.cls_bias = TensorNode(np.zeros(config.num_classes, dtype=np.float32),
                                   requires_grad=True)

    def _act(self, t):
        return ad.tanh(t) if self.config.use_operational else ad.relu(t)

    def forward(self, image: TensorNode) -> GeneratorOutput:
        cfg = self.config
        if image.values.ndim != 4:
            raise ValueError(f"generator input must be NCHW, got shape {image.shape}")
        if image.shape[1] != cfg.in_channels or image.shape[2:] != tuple(cfg.image_size):
            raise ValueError(
                f"generator expects [N, {cfg.in_channels}, {cfg.image_size[0]}, "
                f"{cfg.image_size[1]}] input, got {image.shape}")
        h = operational_conv2d(image, self.enc1, stride=2)
        h = self._act(ad.instance_norm(h, self.norm1.gain, self.norm1.shift))
        h = operational_conv2d(h, self.enc2, stride=2)
        bottleneck = self._act(ad.instance_norm(h, self.norm2.gain, self.norm2.shift))

        pooled = ad.global_average_pool(bottleneck)
        class_probs = ad.softmax(ad.dense(pooled, self.cls_weight, self.cls_bias), axis=-1)

        h = operational_transposed_conv2d(bottleneck, self.dec1, stride=2, output_padding=1)
        h = self._act(ad.instance_norm(h, self.norm3.gain, self.norm3.shift))
        h = operational_transposed_conv2d(h, self.dec2, stride=2, output_padding=1)
        restored = ad.tanh(h)
        return GeneratorOutput(restored=restored, class_probs=class_probs)

    def named_parameters(self):
        out = {}
        for name, params in (("enc1", self.enc1), ("enc2", self.enc2),
                             ("dec1", self.dec1), ("dec2", self.dec2)):
            out[f"{name}/w"] = params.weights
            out[f"{name}/b"] = params.biases
        for name, affine in (("norm1", self.norm1), ("norm2", self.norm2),
                             ("norm3", self.norm3)):
            out[f"{name}/gain"] = affine.gain
            out[f"{name}/shift"] = affine.shift
        out["cls/w"] = self.cls_weight
        out["cls/b"] = self.cls_bias
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def parameter_count(self):
        return sum(t.size for t in self.parameters())


class Discriminator:
    """Patch critic mapping an image to a real-valued mask grid."""

    def __init__(self, config: DiscriminatorConfig, rng):
        self.config = config
        q = config.effective_q
        c = config.base_channels
        k = config.kernel
        self.stage1 = init_operational(config.in_channels, c, k, q, rng)
        self.stage2 = init_operational(c, 2 * c, k, q, rng)
        self.stage3 = init_operational(2 * c, 4 * c, k, q, rng)
        self.norm2 = _Affine(2 * c)
        self.norm3 = _Affine(4 * c)
        self.proj = init_operational(4 * c, 1, k, 1, rng)

    def forward(self, image: TensorNode) -> TensorNode:
        if image.values.ndim != 4:
            raise ValueError(f"discriminator input must be NCHW, got shape {image.shape}")
        if image.shape[1] != self.config.in_channels:
            raise ValueError(
                f"discriminator expects {self.config.in_channels}-channel input, got {image.shape}")
        act = lambda t: ad.leaky_relu(t, 0.2)
        h = act(operational_conv2d(image, self.stage1, stride=2))
        h = operational_conv2d(h, self.stage2, stride=2)
        h = act(ad.instance_norm(h, self.norm2.gain, self.norm2.shift))
        h = operational_conv2d(h, self.stage3, stride=2)
        h = act(ad.instance_norm(h, self.norm3.gain, self.norm3.shift))
        return operational_conv2d(h, self.proj, stride=1)

    def named_parameters(self):
        out = {}
        for name, params in (("stage1", self.stage1), ("stage2", self.stage2),
                             ("stage3", self.stage3), ("proj", self.proj)):
            out[f"{name}/w"] = params.weights
            out[f"{name}/b"] = params.biases
        for name, affine in (("norm2", self.norm2), ("norm3", self.norm3)):
            out[f"{name}/gain"] = affine.gain
            out[f"{name}/shift"] = affine.shift
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def parameter_count(self):
        return sum(t.size for t in self.parameters())


def build_generator(config: GeneratorConfig, rng) -> Generator:
    return Generator(config, rng)


def build_discriminator(config: DiscriminatorConfig, rng) -> Discriminator:
    return Discriminator(config, rng)


def generator_forward(gen: Generator, image: TensorNode) -> GeneratorOutput:
    return gen.forward(image)


def discriminator_forward(disc: Discriminator, image: TensorNode) -> TensorNode:
    return disc.forward(image)
