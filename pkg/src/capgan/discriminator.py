"""Stage discriminators and the word-level region-correlation discriminator."""
from __future__ import annotations

import numpy as np

from .autodiff import (
    CosineFlags,
    Tensor,
    column_cosine,
    concat,
    expand_spatial,
    leaky_relu,
    matmul,
    reshape,
    sigmoid,
    softmax_rows,
    tmean,
    transpose,
)
from .layers import ChannelNorm, Conv2d, Linear, Module, _uniform_fan

GRID = 4  # trunk output is GRID x GRID for every stage


def _down_schedule(size: int) -> list[int]:
    """Output widths for the stride-2 ladder from ``size`` down to GRID."""
    if size < GRID or size & (size - 1):
        raise ValueError(f"stage size must be a power of two >= {GRID}, got {size}")
    downs = (size // GRID).bit_length() - 1
    widths = [16, 32, 64]
    if downs <= len(widths):
        return widths[len(widths) - downs :]
    return [16] * (downs - len(widths)) + widths


class _Trunk(Module):
    """Stride-2 ladder down to a 4x4 grid of 64-channel features."""

    def __init__(self, rng: np.random.Generator, size: int):
        self.size = size
        convs: list[Conv2d] = []
        norms: list[ChannelNorm | None] = []
        c_in = 3
        for i, c_out in enumerate(_down_schedule(size)):
            convs.append(Conv2d(rng, c_in, c_out, 3, stride=2, padding="zero"))
            norms.append(None if i == 0 else ChannelNorm(c_out))
            c_in = c_out
        if not convs:  # size == GRID: nothing to stride, still owe 64 channels
            convs.append(Conv2d(rng, c_in, 64, 3, stride=1, padding="zero"))
            norms.append(None)
        self.convs = convs
        self.norms = norms

    def __call__(self, img: Tensor) -> Tensor:
        if img.shape[2] != self.size or img.shape[3] != self.size:
            raise ValueError(f"expected a {self.size}x{self.size} image, got {img.shape[2]}x{img.shape[3]}")
        h = img
        for conv, norm in zip(self.convs, self.norms):
            h = conv(h)
            if norm is not None:
                h = norm(h)
            h = leaky_relu(h)
        return h  # (B, 64, 4, 4)


class StageDiscriminator(Module):
    """Unconditional and sentence-conditional real/fake probabilities."""

    def __init__(self, rng: np.random.Generator, size: int, word_dim: int):
        self.trunk = _Trunk(rng, size)
        # 1x1 head convs: the 4x4 grid is already deep, and the final
        # Linear mixes all positions anyway
        self.u_conv = Conv2d(rng, 64, 16, 1)
        self.u_out = Linear(rng, 16 * GRID * GRID, 1)
        self.c_conv = Conv2d(rng, 64 + word_dim, 16, 1)
        self.c_out = Linear(rng, 16 * GRID * GRID, 1)

    def __call__(self, img: Tensor, s: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (unconditional prob (B,), conditional prob (B,))."""
        B = img.shape[0]
        h = self.trunk(img)
        u = leaky_relu(self.u_conv(h))
        u = sigmoid(reshape(self.u_out(reshape(u, (B, -1))), (B,)))
        tiled = expand_spatial(s, GRID, GRID)
        c = leaky_relu(self.c_conv(concat([h, tiled], axis=1)))
        c = sigmoid(reshape(self.c_out(reshape(c, (B, -1))), (B,)))
        return u, c


def word_region_correlation(w: Tensor, regions: Tensor, proj: Tensor):
    """Soft alignment of words onto image regions.

    w: (B, D, L) word features; regions: (B, C, R); proj: (D, C).
    beta[b, i, r] = softmax over regions of (w_i . region_r in word space);
    b_feat[:, :, i] is word i's attention-weighted region summary. The
    pooled summary is invariant to any joint permutation of regions
    (the softmax re-aligns), so only region CONTENT can change it.
    """
    ntil = matmul(proj, regions)  # (B, D, R)
    B, D, R = ntil.shape
    L = w.shape[2]
    logits = matmul(transpose(w, (0, 2, 1)), ntil)  # (B, L, R)
    beta = reshape(softmax_rows(reshape(logits, (B * L, R))), (B, L, R))
    b_feat = matmul(ntil, transpose(beta, (0, 2, 1)))  # (B, D, L)
    return beta, b_feat


class RegionEncoder(Module):
    """Image -> (B, C, 16) features over the 4x4 region grid."""

    def __init__(self, rng: np.random.Generator, size: int, channels: int):
        self.size = size
        self.convs = []
        c_in = 3
        for c_out in _down_schedule(size):
            self.convs.append(Conv2d(rng, c_in, min(c_out, channels), 3, stride=2, padding="zero"))
            c_in = min(c_out, channels)
        self.final = Conv2d(rng, c_in, channels, 3, padding="zero")

    def __call__(self, img: Tensor) -> Tensor:
        if img.shape[2] != self.size:
            raise ValueError(f"expected a {self.size}x{self.size} image, got {img.shape[2]}x{img.shape[3]}")
        h = img
        for conv in self.convs:
            h = leaky_relu(conv(h))
        h = leaky_relu(self.final(h))
        B, C = h.shape[0], h.shape[1]
        return reshape(h, (B, C, GRID * GRID))


class WordLevelDiscriminator(Module):
    """Scores how well each word is realized somewhere in the image.

    Images are encoded to a 4x4 grid of region features; each word
    attends over regions, the attended summary is reweighted by a learned
    word-importance softmax, and the cosine against the word feature
    (squashed by a sigmoid) is averaged over real words.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        sizes: list[int],
        channels: int,
        word_dim: int,
        adaptive_pooling: bool = False,
    ):
        self.encoders = [RegionEncoder(rng, size, channels) for size in sizes]
        self.sizes = list(sizes)
        self.proj = Tensor(_uniform_fan(rng, (word_dim, channels), channels), requires_grad=True)
        self.scorer = Linear(rng, word_dim, 1)
        self.adaptive_pooling = adaptive_pooling
        self.flags = CosineFlags()

    def word_importance(self, w: Tensor, bias: np.ndarray) -> Tensor:
        """(B, L) softmax over real words of a learned per-word score."""
        B, D, L = w.shape
        scores = reshape(self.scorer(reshape(transpose(w, (0, 2, 1)), (B * L, D))), (B, L))
        return softmax_rows(scores + Tensor(bias))

    def encode_regions(self, img: Tensor) -> Tensor:
        """(B, C, R) region features; reusable across several correlations."""
        size = img.shape[2]
        try:
            enc = self.encoders[self.sizes.index(size)]
        except ValueError:
            raise ValueError(f"no region encoder for {size}x{size} images") from None
        return enc(img)

    def correlation(
        self,
        w: Tensor,
        bias: np.ndarray,
        lengths: np.ndarray,
        img: Tensor | None = None,
        regions: Tensor | None = None,
    ):
        """Returns (corre (B,) in (0,1), r (B, L), beta (B, L, R)).

        corre averages r over the real words of each caption. Pass either
        an image or precomputed region features.
        """
        if (img is None) == (regions is None):
            raise ValueError("correlation needs exactly one of img or regions")
        if regions is None:
            regions = self.encode_regions(img)  # (B, C, R)
        B, _, L = w.shape
        if self.adaptive_pooling:
            ntil = matmul(self.proj, regions)
            pooled = tmean(ntil, axis=2, keepdims=True)  # (B, D, 1)
            b_feat = pooled * Tensor(np.ones((1, 1, L)))
            beta = Tensor(np.full((B, L, regions.shape[2]), 1.0 / regions.shape[2]))
        else:
            beta, b_feat = word_region_correlation(w, regions, self.proj)
        gamma = self.word_importance(w, bias)  # (B, L)
        btilde = b_feat * reshape(gamma, (B, 1, L))
        r = sigmoid(column_cosine(btilde, w, flags=self.flags))  # (B, L)
        mask = (bias == 0.0).astype(np.float64)
        denom = np.maximum(lengths.astype(np.float64), 1.0)
        corre = (r * Tensor(mask)).sum(axis=1) * Tensor(1.0 / denom)
        return corre, r, beta
