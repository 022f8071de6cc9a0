"""U-Net generator mapping a fixed noise image to a (0, 1) image.

Level ``k`` of the encoder works at spatial size ``W / 2**k`` with
``base_filters * 2**k`` channels; the deepest level is the bottleneck.
Each level is a double block ``(conv3x3 -> channel norm -> LeakyReLU) x 2``.
The decoder upsamples bilinearly, concatenates the encoder skip (skip
first, then upsampled features) and applies a double block. A 1x1
convolution and a sigmoid produce the output image.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArchitectureError, UsageError
from . import ops

NOISE_VARIANCE = 0.1


@dataclass(frozen=True)
class NetArch:
    depth: int = 3
    base_filters: int = 16
    use_skip: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_filters < 4:
            raise ValueError("base_filters must be >= 4")

    def channels(self, level: int) -> int:
        return self.base_filters * 2**level

    def check_width(self, width: int):
        if width % 2**self.depth:
            raise ValueError(f"image width {width} is not divisible by 2**depth = {2**self.depth}")


#: Full-scale preset: five levels with 64..1024 filters.
PAPER_FULL = NetArch(depth=5, base_filters=64)
#: Default desk-scale architecture.
DESK = NetArch(depth=3, base_filters=16)

_ids = itertools.count(1)


@dataclass(eq=False)
class NetParams:
    """Learnable tensors keyed by name, plus the architecture and init seed.

    ``version`` changes whenever the tensors are replaced or updated in
    place through :meth:`bump`, which invalidates earlier tapes.
    """

    arch: NetArch
    tensors: dict[str, np.ndarray]
    seed: int = 0
    version: int = field(default_factory=lambda: next(_ids))

    def bump(self):
        self.version = next(_ids)

    def copy(self) -> "NetParams":
        return NetParams(self.arch, {k: v.copy() for k, v in self.tensors.items()}, self.seed)

    def flat_size(self) -> int:
        return sum(v.size for v in self.tensors.values())


@dataclass(frozen=True, eq=False)
class NoiseInput:
    z: np.ndarray
    seed: int


@dataclass(eq=False)
class ActivationTape:
    params_id: int
    version: int
    out_shape: tuple
    entries: dict
    skip_channels: dict


def _layer_specs(arch: NetArch):
    """Yield ``(prefix, c_in, c_out)`` for every double block, encoder first."""
    base = arch.base_filters
    for k in range(arch.depth):
        c_in = 1 if k == 0 else base * 2 ** (k - 1)
        yield f"enc{k}", c_in, base * 2**k
    for k in reversed(range(arch.depth - 1)):
        c_skip = base * 2**k if arch.use_skip else 0
        yield f"dec{k}", c_skip + base * 2 ** (k + 1), base * 2**k


def param_shapes(arch: NetArch) -> dict[str, tuple]:
    shapes = {}
    for prefix, c_in, c_out in _layer_specs(arch):
        for i, ci in ((1, c_in), (2, c_out)):
            shapes[f"{prefix}.conv{i}.w"] = (c_out, ci, 3, 3)
            shapes[f"{prefix}.conv{i}.b"] = (c_out,)
            shapes[f"{prefix}.norm{i}.gamma"] = (c_out,)
            shapes[f"{prefix}.norm{i}.beta"] = (c_out,)
    shapes["head.w"] = (1, arch.base_filters, 1, 1)
    shapes["head.b"] = (1,)
    return shapes


def init_params(arch: NetArch, seed: int = 0) -> NetParams:
    """Kaiming fan-in normal kernels (LeakyReLU gain), zero biases, unit norm scale."""
    rng = np.random.default_rng(seed)
    a = ops.LEAKY_SLOPE
    tensors = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / (fan_in * (1 + a**2)))
            tensors[name] = rng.standard_normal(shape) * std
        elif name.endswith(".gamma"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return NetParams(arch, tensors, seed)


def sample_noise(seed: int, width: int, arch: NetArch | None = None) -> NoiseInput:
    """Fixed ``1 x W x W`` Gaussian input with mean 0 and variance 0.1."""
    if arch is not None:
        arch.check_width(width)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((1, width, width)) * np.sqrt(NOISE_VARIANCE)
    z.setflags(write=False)
    return NoiseInput(z, seed)


def check_params(params: NetParams):
    expected = param_shapes(params.arch)
    for name, shape in expected.items():
        if name not in params.tensors:
            raise ArchitectureError(f"missing tensor {name}")
        if params.tensors[name].shape != shape:
            raise ArchitectureError(f"layer {name}: shape {params.tensors[name].shape}, expected {shape}")
    extra = set(params.tensors) - set(expected)
    if extra:
        raise ArchitectureError(f"unexpected tensors: {sorted(extra)}")


def _double_block(params, prefix, x, entries):
    t = params.tensors
    for i in (1, 2):
        x, c_conv = ops.conv2d(x, t[f"{prefix}.conv{i}.w"], t[f"{prefix}.conv{i}.b"])
        x, c_norm = ops.channel_norm(x, t[f"{prefix}.norm{i}.gamma"], t[f"{prefix}.norm{i}.beta"])
        x, c_act = ops.leaky_relu(x)
        entries[f"{prefix}.{i}"] = (c_conv, c_norm, c_act)
    return x


def _double_block_backward(prefix, dx, entries, grads):
    for i in (2, 1):
        c_conv, c_norm, c_act = entries[f"{prefix}.{i}"]
        dx = ops.leaky_relu_backward(c_act, dx)
        dx, grads[f"{prefix}.norm{i}.gamma"], grads[f"{prefix}.norm{i}.beta"] = ops.channel_norm_backward(c_norm, dx)
        dx, grads[f"{prefix}.conv{i}.w"], grads[f"{prefix}.conv{i}.b"] = ops.conv2d_backward(c_conv, dx)
    return dx


def unet_forward(params: NetParams, noise: NoiseInput | np.ndarray) -> tuple[np.ndarray, ActivationTape]:
    """Evaluate the generator; returns the ``1 x W x W`` image and a tape for backprop."""
    z = noise.z if isinstance(noise, NoiseInput) else np.asarray(noise, dtype=np.float64)
    arch = params.arch
    check_params(params)
    if z.ndim != 3 or z.shape[0] != 1 or z.shape[1] != z.shape[2]:
        raise ArchitectureError(f"input: expected 1 x W x W noise, got shape {z.shape}")
    try:
        arch.check_width(z.shape[1])
    except ValueError as exc:
        raise ArchitectureError(f"input: {exc}") from None
    entries = {}
    skips = []
    x = z
    for k in range(arch.depth):
        x = _double_block(params, f"enc{k}", x, entries)
        if k < arch.depth - 1:
            skips.append(x)
            x, entries[f"pool{k}"] = ops.maxpool2(x)
    skip_channels = {}
    for k in reversed(range(arch.depth - 1)):
        x, entries[f"up{k}"] = ops.upsample2(x)
        if arch.use_skip:
            skip_channels[k] = skips[k].shape[0]
            x, entries[f"cat{k}"] = ops.concat(skips[k], x)
        x = _double_block(params, f"dec{k}", x, entries)
    t = params.tensors
    x, entries["head"] = ops.conv2d(x, t["head.w"], t["head.b"])
    img, entries["sigmoid"] = ops.sigmoid(x)
    img = np.clip(img, 1e-15, 1 - 1e-15)
    tape = ActivationTape(id(params), params.version, img.shape, entries, skip_channels)
    return img, tape


def unet_backward(tape: ActivationTape, dl_dimg: np.ndarray, params: NetParams | None = None) -> dict[str, np.ndarray]:
    """Exact gradients of a scalar loss w.r.t. every tensor, given dL/dI.

    Passing ``params`` lets the tape verify it still matches their current
    version.
    """
    if params is not None and (tape.params_id != id(params) or tape.version != params.version):
        raise UsageError("activation tape is stale: parameters changed since the forward pass")
    dl_dimg = np.asarray(dl_dimg, dtype=np.float64)
    if dl_dimg.shape != tape.out_shape:
        raise UsageError(f"gradient shape {dl_dimg.shape} does not match tape output {tape.out_shape}")
    e = tape.entries
    depth = 1 + sum(1 for key in e if key.startswith("pool"))
    grads: dict[str, np.ndarray] = {}
    dx = ops.sigmoid_backward(e["sigmoid"], dl_dimg)
    dx, grads["head.w"], grads["head.b"] = ops.conv2d_backward(e["head"], dx)
    dskips = {}
    for k in range(depth - 1):
        dx = _double_block_backward(f"dec{k}", dx, e, grads)
        if k in tape.skip_channels:
            dskips[k], dx = ops.concat_backward(e[f"cat{k}"], dx)
        dx = ops.upsample2_backward(e[f"up{k}"], dx)
    for k in reversed(range(depth)):
        if k < depth - 1:
            dx = ops.maxpool2_backward(e[f"pool{k}"], dx)
            if k in dskips:
                dx = dx + dskips[k]
        dx = _double_block_backward(f"enc{k}", dx, e, grads)
    return grads
