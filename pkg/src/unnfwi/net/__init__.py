"""Untrained U-Net generator and its tensor primitives."""

from .unet import (
    DESK,
    PAPER_FULL,
    ActivationTape,
    NetArch,
    NetParams,
    NoiseInput,
    init_params,
    param_shapes,
    sample_noise,
    unet_backward,
    unet_forward,
)

__all__ = [
    "DESK",
    "PAPER_FULL",
    "ActivationTape",
    "NetArch",
    "NetParams",
    "NoiseInput",
    "init_params",
    "param_shapes",
    "sample_noise",
    "unet_backward",
    "unet_forward",
]
