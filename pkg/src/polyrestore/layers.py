"""Operational 2-D layers built from polynomial ("generative") neurons.

A standard convolutional neuron applies one linear kernel. An operational
neuron of order Q learns a degree-Q polynomial transformation per kernel
element: the layer output is

    sigma( sum_{q=1..Q} conv2d(x**q, w_q) + b_q )

so Q = 1 degenerates to an ordinary convolution. The constant polynomial
term is carried entirely by the bias, which is why powers start at q = 1.

For speed the Q branches are fused into a single convolution over the
channel-stacked powers [x, x**2, ..., x**Q]; the algebra is identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import TensorNode


@dataclass
class OperationalFilterParams:
    """Trainable state of one operational layer.

    weights: [Q, C_out, C_in, m, n]   (per-order kernel banks)
    biases:  [Q, C_out]               (per-order biases; they add up, but the
                                       split layout is kept so parameter
                                       counts stay exactly linear in Q)
    """

    q: int
    weights: TensorNode
    biases: TensorNode

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"polynomial order must be >= 1, got {self.q}")
        if self.weights.values.ndim != 5 or self.weights.shape[0] != self.q:
            raise ValueError(
                f"weights must be [Q={self.q}, C_out, C_in, m, n], got shape {self.weights.shape}")
        if self.biases.shape != (self.q, self.weights.shape[1]):
            raise ValueError(
                f"biases must be [Q={self.q}, C_out={self.weights.shape[1]}], got {self.biases.shape}")
        m, n = self.weights.shape[3], self.weights.shape[4]
        if m % 2 == 0 or n % 2 == 0:
            raise ValueError(f"kernels must be odd-sized (centered), got {m}x{n}")

    @property
    def out_channels(self):
        return self.weights.shape[1]

    @property
    def in_channels(self):
        return self.weights.shape[2]

    @property
    def kernel(self):
        return (self.weights.shape[3], self.weights.shape[4])

    def parameter_count(self):
        return self.weights.size + self.biases.size

    def tensors(self):
        return [self.weights, self.biases]


def init_operational(in_channels, out_channels, kernel, q, rng, dtype=np.float32):
    """Scaled-uniform initialization.

    The q = 1 bank gets variance 1/fan_in (fan-in of that branch); the q-th
    bank is scaled down by 1/q! to mimic the decaying magnitude of polynomial
    coefficients and keep early outputs bounded. Biases start at zero.
    """
    m, n = kernel if isinstance(kernel, tuple) else (kernel, kernel)
    fan_in = in_channels * m * n
    limit = math.sqrt(3.0 / fan_in)
    banks = [
        rng.uniform(-limit / math.factorial(order), limit / math.factorial(order),
                    size=(1, out_channels, in_channels, m, n))
        for order in range(1, q + 1)
    ]
    weights = np.concatenate(banks, axis=0).astype(dtype)
    biases = np.zeros((q, out_channels), dtype=dtype)
    return OperationalFilterParams(
        q=q,
        weights=TensorNode(weights, requires_grad=True),
        biases=TensorNode(biases, requires_grad=True),
    )


def _stacked_powers(x, q):
    if q == 1:
        return x
    return ad.concat([ad.elementwise_power(x, order) for order in range(1, q + 1)], axis=1)


def _fused_conv_weights(params):
    # [Q, C_out, C_in, m, n] -> [C_out, Q*C_in, m, n]
    q, co, ci, m, n = params.weights.shape
    w = ad.transpose(params.weights, (1, 0, 2, 3, 4))
    return ad.reshape(w, (co, q * ci, m, n))


def _fused_tconv_weights(params):
    # [Q, C_out, C_in, m, n] -> [Q*C_in, C_out, m, n]
    q, co, ci, m, n = params.weights.shape
    w = ad.transpose(params.weights, (0, 2, 1, 3, 4))
    return ad.reshape(w, (q * ci, co, m, n))


def _summed_bias(params):
    return ad.reduce_sum(params.biases, axis=0)


def _check_input(x, params, name):
    if x.values.ndim != 4:
        raise ValueError(f"{name}: input must be NCHW, got shape {x.shape}")
    if x.shape[1] != params.in_channels:
        raise ValueError(
            f"{name}: input has {x.shape[1]} channels but params expect {params.in_channels}")


def operational_conv2d(x, params, activation=None, stride=1, padding=None):
    """Polynomial convolution: sum over q of conv2d(x**q, w_q) + b_q, then
    the given activation (None means linear)."""
    _check_input(x, params, "operational_conv2d")
    if padding is None:
        padding = params.kernel[0] // 2
    out = ad.conv2d(_stacked_powers(x, params.q), _fused_conv_weights(params),
                    bias=_summed_bias(params), stride=stride, padding=padding)
    return activation(out) if activation is not None else out


def operational_transposed_conv2d(x, params, activation=None, stride=1, padding=None,
                                  output_padding=0):
    """Upsampling counterpart: the same polynomial algebra over a transposed
    convolution. stride 2 with output_padding 1 doubles the spatial size."""
    _check_input(x, params, "operational_transposed_conv2d")
    if padding is None:
        padding = params.kernel[0] // 2
    out = ad.transposed_conv2d(_stacked_powers(x, params.q), _fused_tconv_weights(params),
                               bias=_summed_bias(params), stride=stride, padding=padding,
                               output_padding=output_padding)
    return activation(out) if activation is not None else out
