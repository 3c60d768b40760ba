"""Untrained convolutional decoder with hand-written forward and backward passes.

The generator maps a fixed random tensor z (channels x 8 x 8 by default) to a
single-channel image. Each block is conv3x3 -> BN -> ReLU -> conv3x3 -> BN ->
ReLU, optionally followed by a learned 2x2 stride-2 transposed convolution
that doubles the resolution; the head is conv3x3 -> BN -> ReLU -> conv1x1.
Batch normalization always uses the current spatial statistics of the single
sample (there is no training/inference distinction for this model).

The backward pass is an exact vector-Jacobian product through every layer,
including the batch-norm statistics terms, so parameter gradients can be
validated against finite differences at double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import StaleCacheError

BN_EPSILON = 1e-5


@dataclass(frozen=True)
class DecoderArch:
    """Shape of the generator; upsample blocks double the spatial resolution."""

    n_blocks: int = 5
    channels: int = 64
    input_hw: int = 8
    output_hw: int = 128
    upsample_blocks: frozenset[int] = frozenset({1, 2, 3, 4})

    def __post_init__(self):
        object.__setattr__(self, "upsample_blocks", frozenset(self.upsample_blocks))
        if self.n_blocks < 1 or self.channels < 1 or self.input_hw < 1:
            raise ValueError("architecture sizes must be positive")
        bad = [i for i in self.upsample_blocks if not 1 <= i <= self.n_blocks]
        if bad:
            raise ValueError(f"upsample block indices out of range: {bad}")
        if self.input_hw * 2 ** len(self.upsample_blocks) != self.output_hw:
            raise ValueError(
                f"{self.input_hw}x{self.input_hw} input with "
                f"{len(self.upsample_blocks)} doublings cannot reach "
                f"{self.output_hw}x{self.output_hw}"
            )

    def layer_plan(self) -> list[tuple[str, str]]:
        plan: list[tuple[str, str]] = []
        for i in range(1, self.n_blocks + 1):
            plan += [
                ("conv", f"b{i}.conv1"), ("bn", f"b{i}.bn1"), ("relu", f"b{i}.act1"),
                ("conv", f"b{i}.conv2"), ("bn", f"b{i}.bn2"), ("relu", f"b{i}.act2"),
            ]
            if i in self.upsample_blocks:
                plan.append(("up", f"b{i}.up"))
        plan += [
            ("conv", "head.conv"), ("bn", "head.bn"), ("relu", "head.act"),
            ("proj", "head.proj"),
        ]
        return plan


@dataclass(frozen=True, eq=False)
class DecoderParams:
    """Named parameter tensors; treated as immutable (updates build new instances)."""

    arch: DecoderArch
    tensors: dict[str, np.ndarray]

    def names(self) -> list[str]:
        return list(self.tensors)


@dataclass(frozen=True, eq=False)
class FixedInput:
    """The random input z, fixed for the whole optimization."""

    z: np.ndarray = field(repr=False)
    seed: int = 0

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=np.float64)
        z.flags.writeable = False
        object.__setattr__(self, "z", z)


def sample_input(arch: DecoderArch, seed: int, std: float = 0.1) -> FixedInput:
    """Gaussian random input, N(0, std^2) i.i.d., deterministic per seed."""
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, std, size=(arch.channels, arch.input_hw, arch.input_hw))
    return FixedInput(z=z, seed=seed)


def init_decoder(arch: DecoderArch, seed: int) -> DecoderParams:
    """Scaled-Gaussian initialization: kernels N(0, 2/fan_in), biases 0, BN identity."""
    rng = np.random.default_rng(seed)
    c = arch.channels
    tensors: dict[str, np.ndarray] = {}

    def conv(name: str, c_out: int, c_in: int, k: int):
        std = np.sqrt(2.0 / (c_in * k * k))
        tensors[f"{name}.w"] = rng.normal(0.0, std, size=(c_out, c_in, k, k))
        tensors[f"{name}.b"] = np.zeros(c_out)

    def bn(name: str, ch: int):
        tensors[f"{name}.g"] = np.ones(ch)
        tensors[f"{name}.b"] = np.zeros(ch)

    for kind, name in arch.layer_plan():
        if kind == "conv":
            conv(name, c, c, 3)
        elif kind == "bn":
            bn(name, c)
        elif kind == "up":
            # 2x2 stride-2 kernels tile without overlap, so fan_in is c
            std = np.sqrt(2.0 / c)
            tensors[f"{name}.w"] = rng.normal(0.0, std, size=(c, c, 2, 2))
        elif kind == "proj":
            conv(name, 1, c, 1)
    return DecoderParams(arch=arch, tensors=tensors)


# ---------------------------------------------------------------------------
# layer primitives
# ---------------------------------------------------------------------------

def _im2col3(x: np.ndarray) -> np.ndarray:
    """3x3 patches of a zero-padded (C, H, W) tensor as a (C*9, H*W) matrix."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * 9, h * w)


def _conv3_forward(x, kernel, bias):
    c_out = kernel.shape[0]
    h, w = x.shape[1:]
    cols = _im2col3(x)
    y = (kernel.reshape(c_out, -1) @ cols).reshape(c_out, h, w)
    return y + bias[:, None, None]


def _conv3_backward(x, kernel, gy):
    c_in, (h, w) = x.shape[0], x.shape[1:]
    c_out = kernel.shape[0]
    gy2 = gy.reshape(c_out, -1)
    cols = _im2col3(x)
    g_bias = gy2.sum(axis=1)
    g_kernel = (gy2 @ cols.T).reshape(kernel.shape)
    gcols = (kernel.reshape(c_out, -1).T @ gy2).reshape(c_in, 3, 3, h, w)
    gxp = np.zeros((c_in, h + 2, w + 2))
    for di in range(3):
        for dj in range(3):
            gxp[:, di : di + h, dj : dj + w] += gcols[:, di, dj]
    return gxp[:, 1 : h + 1, 1 : w + 1], g_kernel, g_bias


def _bn_forward(x, gamma, beta):
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + BN_EPSILON)
    xhat = (x - mu) * inv
    return gamma[:, None, None] * xhat + beta[:, None, None], xhat, inv


def _bn_backward(xhat, inv, gamma, gy):
    g_beta = gy.sum(axis=(1, 2))
    g_gamma = (gy * xhat).sum(axis=(1, 2))
    gh = gy * gamma[:, None, None]
    gh_mean = gh.mean(axis=(1, 2), keepdims=True)
    ghx_mean = (gh * xhat).mean(axis=(1, 2), keepdims=True)
    gx = inv * (gh - gh_mean - xhat * ghx_mean)
    return gx, g_gamma, g_beta


def _up_forward(x, kernel):
    c_in, h, w = x.shape
    c_out = kernel.shape[1]
    xm = x.reshape(c_in, -1)
    out = np.empty((c_out, 2 * h, 2 * w))
    for di in (0, 1):
        for dj in (0, 1):
            out[:, di::2, dj::2] = (kernel[:, :, di, dj].T @ xm).reshape(c_out, h, w)
    return out

def _up_backward(x, kernel, gy):
    c_in, h, w = x.shape
    xm = x.reshape(c_in, -1)
    gx = np.zeros_like(x)
    g_kernel = np.empty_like(kernel)
    for di in (0, 1):
        for dj in (0, 1):
            sub = np.ascontiguousarray(gy[:, di::2, dj::2]).reshape(-1, h * w)
            g_kernel[:, :, di, dj] = xm @ sub.T
            gx += (kernel[:, :, di, dj] @ sub).reshape(x.shape)
    return gx, g_kernel


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ActivationCache:
    """Every intermediate needed by the backward pass, tied to its parameters."""

    params: DecoderParams
    steps: list[tuple]
    image: np.ndarray


def decoder_forward(
    params: DecoderParams, z: FixedInput
) -> tuple[np.ndarray, ActivationCache]:
    """Run the generator; returns the (H, W) image and the activation cache."""
    arch = params.arch
    if z.z.shape != (arch.channels, arch.input_hw, arch.input_hw):
        raise ValueError(
            f"input shaped {z.z.shape} does not match the architecture "
            f"({arch.channels}, {arch.input_hw}, {arch.input_hw})"
        )
    t = params.tensors
    x = z.z
    steps: list[tuple] = []
    for kind, name in arch.layer_plan():
        if kind == "conv":
            steps.append((kind, name, x))
            x = _conv3_forward(x, t[f"{name}.w"], t[f"{name}.b"])
        elif kind == "proj":
            steps.append((kind, name, x))
            y = t[f"{name}.w"].reshape(1, -1) @ x.reshape(x.shape[0], -1)
            x = y.reshape(1, *x.shape[1:]) + t[f"{name}.b"][:, None, None]
        elif kind == "bn":
            x, xhat, inv = _bn_forward(x, t[f"{name}.g"], t[f"{name}.b"])
            steps.append((kind, name, xhat, inv))
        elif kind == "relu":
            mask = x > 0.0
            x = np.where(mask, x, 0.0)
            steps.append((kind, name, mask))
        elif kind == "up":
            steps.append((kind, name, x))
            x = _up_forward(x, t[f"{name}.w"])
    image = x[0]
    return image, ActivationCache(params=params, steps=steps, image=image)


def decoder_backward(
    params: DecoderParams, cache: ActivationCache, grad_output: np.ndarray
) -> dict[str, np.ndarray]:
    """Vector-Jacobian product: gradients of <grad_output, D(params, z)>."""
    if cache.params is not params:
        raise StaleCacheError("activation cache does not belong to these parameters")
    if grad_output.shape != cache.image.shape:
        raise ValueError(
            f"grad_output shaped {grad_output.shape} does not match the "
            f"decoder output {cache.image.shape}"
        )
    t = params.tensors
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(grad_output, dtype=np.float64)[None]
    for step in reversed(cache.steps):
        kind, name = step[0], step[1]
        if kind == "conv":
            x = step[2]
            g, gw, gb = _conv3_backward(x, t[f"{name}.w"], g)
            grads[f"{name}.w"], grads[f"{name}.b"] = gw, gb
        elif kind == "proj":
            x = step[2]
            kernel = t[f"{name}.w"]
            g2 = g.reshape(1, -1)
            grads[f"{name}.b"] = g2.sum(axis=1)
            grads[f"{name}.w"] = (g2 @ x.reshape(x.shape[0], -1).T).reshape(kernel.shape)
            g = (kernel.reshape(-1, 1) @ g2).reshape(x.shape)
        elif kind == "bn":
            xhat, inv = step[2], step[3]
            g, gg, gb = _bn_backward(xhat, inv, t[f"{name}.g"], g)
            grads[f"{name}.g"], grads[f"{name}.b"] = gg, gb
        elif kind == "relu":
            g = g * step[2]
        elif kind == "up":
            x = step[2]
            g, gw = _up_backward(x, t[f"{name}.w"], g)
            grads[f"{name}.w"] = gw
    return {name: grads[name] for name in params.tensors}
