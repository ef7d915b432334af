"""Parameter containers built on the autodiff Tensor.

Modules discover parameters and submodules by walking their attributes
in assignment order, which is stable across runs, so checkpoint names
are canonical without any extra registry.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, channel_norm, conv2d, embedding, matmul


class Module:
    """Base container; yields every Tensor attribute, frozen ones included."""

    def named_tensors(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = name if prefix == "" else f"{prefix}.{name}"
            if isinstance(value, Tensor):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_tensors(key)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{key}.{i}")

    def parameters(self) -> list[Tensor]:
        """Trainable tensors only (what optimizers should see)."""
        return [t for _, t in self.named_tensors() if t.requires_grad]


def _uniform_fan(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x @ w + b with w stored (in, out) so no transpose op is needed."""

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, trainable: bool = True):
        self.w = Tensor(_uniform_fan(rng, (n_in, n_out), n_in), requires_grad=trainable)
        self.b = Tensor(np.zeros(n_out), requires_grad=trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int = 1,
        padding: str = "reflect",
        trainable: bool = True,
    ):
        fan_in = c_in * kernel * kernel
        self.w = Tensor(_uniform_fan(rng, (c_out, c_in, kernel, kernel), fan_in), requires_grad=trainable)
        self.b = Tensor(np.zeros(c_out), requires_grad=trainable)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class ChannelNorm(Module):
    """Per-sample spatial normalization with learned per-channel affine."""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return channel_norm(x, self.gamma, self.beta, eps=self.eps)


class Embedding(Module):
    """Token lookup table, N(0, 1) rows.

    Unit-scale rows keep recurrent gate pre-activations O(1), so two
    captions differing in one token already produce visibly different
    encoder states at initialization; fan-scaled rows start the text
    pathway near-constant and the matching losses at a saddle.
    """

    def __init__(self, rng: np.random.Generator, n_vocab: int, dim: int):
        self.w = Tensor(rng.normal(0.0, 1.0, size=(n_vocab, dim)), requires_grad=True)

    def __call__(self, indices: np.ndarray) -> Tensor:
        return embedding(self.w, indices)
