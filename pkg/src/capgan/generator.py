"""Multi-stage image generator with word-level spatial and channel attention.

Stage 1 maps the augmented sentence vector plus noise to a coarse feature
grid; each later stage attends over word features, refines at the current
resolution, then upsamples 2x. Every stage emits an RGB image in [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, leaky_relu, matmul, reshape, softmax_rows, tanh, transpose, upsample2x
from .layers import ChannelNorm, Conv2d, Linear, Module, _uniform_fan


_MASK_FLOOR = -1e8  # logit biases at or below this count as fully masked


def _trim_masked(w: Tensor, bias: np.ndarray):
    """Drop trailing word columns that are masked in every batch row.

    BLAS may regroup sums when matrix widths change, so keeping masked
    columns would let appended padding perturb low-order bits. Trimming
    makes the padded call compute on exactly the unpadded operands.
    """
    L = bias.shape[1]
    active = (bias > _MASK_FLOOR).any(axis=0)
    if not active.any():
        return w, bias, L
    eff = int(np.flatnonzero(active)[-1]) + 1
    if eff == L:
        return w, bias, L
    return w[:, :, :eff], bias[:, :eff], L


def _pad_attention(a: Tensor, full_len: int) -> Tensor:
    # masked words carry exactly zero weight, so restore them as zeros
    gap = full_len - a.shape[2]
    if gap == 0:
        return a
    return concat([a, Tensor(np.zeros(a.shape[:2] + (gap,)))], axis=2)


def channel_attention(w: Tensor, bias: np.ndarray, v: Tensor, proj: Tensor):
    """Per-channel attention over words.

    Word features are first projected into the spatial layout (one value
    per pixel), each hidden channel is correlated against every projected
    word, and the softmax over words mixes the projections back into a
    channel-aligned feature map.

    w: (B, D, L); bias: (B, L) additive logit mask; v: (B, C, H, W);
    proj: (H*W, D). Returns (attended (B, C, H, W), alpha (B, C, L)).
    """
    B, C, H, W = v.shape
    w, bias, full_len = _trim_masked(w, bias)
    L = w.shape[2]
    wt = matmul(proj, w)  # (B, H*W, L)
    vf = reshape(v, (B, C, H * W))
    logits = matmul(vf, wt)  # (B, C, L)
    logits = logits + Tensor(bias[:, None, :])
    alpha = reshape(softmax_rows(reshape(logits, (B * C, L))), (B, C, L))
    attended = matmul(alpha, transpose(wt, (0, 2, 1)))  # (B, C, H*W)
    return reshape(attended, (B, C, H, W)), _pad_attention(alpha, full_len)


def spatial_attention(w: Tensor, bias: np.ndarray, v: Tensor, proj: Tensor):
    """Per-pixel attention over words (the word-context image feature).

    w: (B, D, L); bias: (B, L); v: (B, C, H, W); proj: (C, D) mapping
    words into the hidden channel space. Returns (attended (B, C, H, W),
    beta (B, H*W, L)).
    """
    B, C, H, W = v.shape
    w, bias, full_len = _trim_masked(w, bias)
    L = w.shape[2]
    uw = matmul(proj, w)  # (B, C, L)
    vf = transpose(reshape(v, (B, C, H * W)), (0, 2, 1))  # (B, H*W, C)
    logits = matmul(vf, uw) + Tensor(bias[:, None, :])  # (B, H*W, L)
    beta = reshape(softmax_rows(reshape(logits, (B * H * W, L))), (B, H * W, L))
    attended = matmul(uw, transpose(beta, (0, 2, 1)))  # (B, C, H*W)
    return reshape(attended, (B, C, H, W)), _pad_attention(beta, full_len)


class ResBlock(Module):
    """Two 3x3 convs with a skip; reflect padding avoids border artifacts."""

    def __init__(self, rng: np.random.Generator, channels: int):
        self.conv1 = Conv2d(rng, channels, channels, 3)
        self.norm1 = ChannelNorm(channels)
        self.conv2 = Conv2d(rng, channels, channels, 3)
        self.norm2 = ChannelNorm(channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return leaky_relu(x + h)


class UpStage(Module):
    """Attend over words, fuse, refine, then double the resolution."""

    def __init__(self, rng: np.random.Generator, channels: int, word_dim: int, in_size: int, use_channel_attn: bool):
        self.use_channel_attn = use_channel_attn
        self.spatial_proj = Tensor(_uniform_fan(rng, (channels, word_dim), word_dim), requires_grad=True)
        if use_channel_attn:
            self.channel_proj = Tensor(
                _uniform_fan(rng, (in_size * in_size, word_dim), word_dim), requires_grad=True
            )
        fused = channels * (3 if use_channel_attn else 2)
        self.join = Conv2d(rng, fused, channels, 1)
        self.join_norm = ChannelNorm(channels)
        self.res = ResBlock(rng, channels)

    def __call__(self, v: Tensor, w: Tensor, bias: np.ndarray):
        spat, beta = spatial_attention(w, bias, v, self.spatial_proj)
        parts = [v, spat]
        alpha = None
        if self.use_channel_attn:
            chan, alpha = channel_attention(w, bias, v, self.channel_proj)
            parts.append(chan)
        h = leaky_relu(self.join_norm(self.join(concat(parts, axis=1))))
        h = self.res(h)
        # refinement stays at the input resolution; the per-stage image head
        # is the only full-resolution conv, which keeps desk-scale steps fast
        return upsample2x(h), alpha, beta


@dataclass
class GeneratorOutput:
    images: list[Tensor]  # one (B, 3, size, size) per stage, coarse to fine
    hiddens: list[Tensor]
    alphas: dict[int, Tensor] = field(default_factory=dict)  # stage -> (B, C, L)
    betas: dict[int, Tensor] = field(default_factory=dict)  # stage -> (B, H*W, L)


class Generator(Module):
    """K-stage ladder; attention runs at every stage after the first."""

    def __init__(
        self,
        rng: np.random.Generator,
        stages: int,
        base_size: int,
        channels: int,
        word_dim: int,
        ca_dim: int,
        noise_dim: int,
        use_channel_attn: bool = True,
    ):
        self.base_size = base_size
        self.fc = Linear(rng, ca_dim + noise_dim, channels * base_size * base_size)
        self.fc_norm = ChannelNorm(channels)
        self.res0 = ResBlock(rng, channels)
        self.stages = [
            UpStage(rng, channels, word_dim, base_size * 2**i, use_channel_attn)
            for i in range(stages - 1)
        ]
        self.to_img = [Conv2d(rng, channels, 3, 3) for _ in range(stages)]
        self.channels = channels

    def __call__(self, s_tilde: Tensor, z: Tensor, w: Tensor, bias: np.ndarray) -> GeneratorOutput:
        B = s_tilde.shape[0]
        size = self.base_size
        h = self.fc(concat([s_tilde, z], axis=1))
        h = reshape(h, (B, self.channels, size, size))
        h = self.res0(leaky_relu(self.fc_norm(h)))
        out = GeneratorOutput(images=[tanh(self.to_img[0](h))], hiddens=[h])
        for i, stage in enumerate(self.stages):
            h, alpha, beta = stage(h, w, bias)
            stage_no = i + 2
            if alpha is not None:
                out.alphas[stage_no] = alpha
            out.betas[stage_no] = beta
            out.images.append(tanh(self.to_img[i + 1](h)))
            out.hiddens.append(h)
        return out
