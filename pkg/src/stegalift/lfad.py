"""Spatially variant low-pass filtering of feature maps.

A 3x3 convolution predicts nine logits per location; a kernel-wise softmax
turns them into a low-pass filter bank (non-negative, summing to one at
every pixel). The bank is applied channel-wise to the map it was predicted
from. Subtracting the bank from the identity kernel yields the zero-sum
high-pass variant.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, conv2d_3x3, local_filter_3x3, softmax

KERNEL_TAPS = 9  # 3x3 window, taps in row-major offset order
CENTER_TAP = 4

LOWPASS = "lowpass"
HIGHPASS = "highpass"


@dataclass
class FilterBank:
    """Per-location flattened 3x3 kernels: (9,H,W) or (B,9,H,W)."""

    weights: Tensor
    mode: str

    def __post_init__(self):
        if self.weights.shape[-3] != KERNEL_TAPS:
            raise DimensionError("filter bank needs 9 taps per location",
                                 self.weights.shape)
        if self.mode not in (LOWPASS, HIGHPASS):
            raise ContractError("unknown filter mode %r" % (self.mode,))

    @property
    def spatial_shape(self):
        return self.weights.shape[-2:]


def predict_lowpass_filters(features, conv_weights):
    """Predict a low-pass FilterBank from (C,H,W) or (B,C,H,W) features."""
    if conv_weights.shape[0] != KERNEL_TAPS:
        raise DimensionError("predictor must emit 9 logit channels",
                             conv_weights.shape)
    logits = conv2d_3x3(features, conv_weights)
    weights = softmax(logits, axis=-3)  # over the 9 taps at each location
    return FilterBank(weights=weights, mode=LOWPASS)


def apply_filters(x, fb):
    """Filter ``x`` with the per-location kernels of ``fb`` (channel-wise)."""
    if x.shape[-2:] != fb.spatial_shape:
        raise DimensionError("filter bank spatial size differs from input",
                             x.shape, fb.weights.shape)
    return local_filter_3x3(x, fb.weights)


def invert_to_highpass(fb):
    """High-pass bank: identity kernel minus the low-pass weights."""
    if fb.mode != LOWPASS:
        raise ContractError("invert_to_highpass expects a lowpass bank")
    e = np.zeros((KERNEL_TAPS,) + (1,) * (fb.weights.ndim - 1))
    e.reshape(KERNEL_TAPS, -1)[CENTER_TAP] = 1.0
    shape = [1] * fb.weights.ndim
    shape[-3] = KERNEL_TAPS
    identity = Tensor(e.reshape(shape))
    return FilterBank(weights=identity - fb.weights, mode=HIGHPASS)
