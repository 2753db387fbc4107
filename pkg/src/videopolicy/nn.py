"""Neural-network building blocks and the Adam optimizer.

Modules register parameters and submodules by attribute assignment; the
parameter walk is deterministic (insertion order), which the checkpoint
format relies on. Constructors take an explicit ``rng`` so that two models
built from the same seed are bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Parameter,
    Tensor,
    concat,
    conv2d,
    embedding,
    gelu,
    group_norm,
    layer_norm,
    matmul,
    silu,
    softmax,
)

__all__ = [
    "Module",
    "ModuleList",
    "Linear",
    "Conv2d",
    "GroupNorm",
    "LayerNorm",
    "Embedding",
    "Attention",
    "FeedForward",
    "Adam",
    "timestep_embedding",
]


class Module:
    """Base class: tracks Parameters and child Modules by attribute order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class ModuleList(Module):
    """An indexable sequence of submodules."""

    def __init__(self, mods=()):
        for i, m in enumerate(mods):
            setattr(self, str(i), m)

    def append(self, mod: Module) -> None:
        setattr(self, str(len(self)), mod)

    def __len__(self) -> int:
        return len(self.__dict__)

    def __getitem__(self, i: int) -> Module:
        return self.__dict__[str(i)]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, scale: float | None = None, bias: bool = True):
        std = scale if scale is not None else 1.0 / math.sqrt(d_in)
        self.weight = Parameter(rng.normal(0.0, std, (d_in, d_out)).astype(dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class Conv2d(Module):
    """Channels-last conv, kernel 1 or 3, stride 1 or 2, "same" padding."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, dtype=np.float32, scale: float | None = None):
        fan_in = c_in * kernel * kernel
        std = scale if scale is not None else 1.0 / math.sqrt(fan_in)
        self.weight = Parameter(rng.normal(0.0, std, (kernel, kernel, c_in, c_out)).astype(dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 8, dtype=np.float32):
        if channels % groups:
            groups = math.gcd(channels, groups)
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.weight, self.bias, self.groups)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.weight = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Parameter(rng.normal(0.0, 0.02, (n, dim)).astype(dtype))

    def __call__(self, idx: np.ndarray) -> Tensor:
        return embedding(self.weight, idx)


class Attention(Module):
    """Multi-head attention; self-attention when no context is passed."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 ctx_dim: int | None = None, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        ctx_dim = ctx_dim if ctx_dim is not None else dim
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(ctx_dim, dim, rng, dtype)
        self.v = Linear(ctx_dim, dim, rng, dtype)
        self.out = Linear(dim, dim, rng, dtype, scale=0.5 / math.sqrt(dim))
        self.heads = heads

    def __call__(self, x: Tensor, ctx: Tensor | None = None) -> Tensor:
        ctx = ctx if ctx is not None else x
        n, lq, d = x.shape
        lk = ctx.shape[1]
        h = self.heads
        dh = d // h
        q = self.q(x).reshape(n, lq, h, dh).transpose(0, 2, 1, 3)
        k = self.k(ctx).reshape(n, lk, h, dh).transpose(0, 2, 1, 3)
        v = self.v(ctx).reshape(n, lk, h, dh).transpose(0, 2, 1, 3)
        att = softmax(matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)))
        y = matmul(att, v).transpose(0, 2, 1, 3).reshape(n, lq, d)
        return self.out(y)


class FeedForward(Module):
    def __init__(self, dim: int, rng: np.random.Generator, mult: int = 4, dtype=np.float32):
        self.fc1 = Linear(dim, dim * mult, rng, dtype)
        self.fc2 = Linear(dim * mult, dim, rng, dtype, scale=0.5 / math.sqrt(dim * mult))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0,
                       dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of integer diffusion steps, shape ``[B, dim]``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.pad(emb, ((0, 0), (0, 1)))
    return emb.astype(dtype)


@dataclass
class Adam:
    """Classic Adam over an explicit parameter list."""

    params: list[Parameter]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: list[np.ndarray] = field(default_factory=list)
    _v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
