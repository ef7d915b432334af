"""Caption tokenization and the recurrent text encoder.

Captions become word features w (B, D, L) and a sentence feature s (B, D).
Padded positions carry exact zeros in w and an additive -1e9 bias for
attention logits, so no downstream op ever attends to padding.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor, clamp, concat, exp, reshape, sigmoid, tanh, tsum
from .layers import Embedding, Linear, Module

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1
MASK_BIAS = -1e9


def tokenize(caption: str) -> list[str]:
    return caption.lower().split()


class Vocabulary:
    """Closed token set; index = position in the newline-delimited file."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with the pad and unknown tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words: list[str], strict: bool = False) -> list[int]:
        """Map words to indices; unknown words error in strict mode."""
        if strict:
            bad = [w for w in words if w not in self.index]
            if bad:
                raise OovError(bad)
        return [self.index.get(w, UNK_INDEX) for w in words]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens)


class OovError(ValueError):
    """Raised in strict mode; carries the offending tokens."""

    def __init__(self, tokens: list[str]):
        super().__init__(f"out-of-vocabulary tokens: {', '.join(tokens)}")
        self.tokens = tokens


def pad_captions(encoded: list[list[int]], l_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad index lists to (B, l_max); overlong captions are an error."""
    for ids in encoded:
        if len(ids) > l_max:
            raise ValueError(f"caption of {len(ids)} tokens exceeds the maximum of {l_max}")
    batch = np.full((len(encoded), l_max), PAD_INDEX, dtype=np.int64)
    lengths = np.zeros(len(encoded), dtype=np.int64)
    for i, ids in enumerate(encoded):
        batch[i, : len(ids)] = ids
        lengths[i] = len(ids)
    return batch, lengths


def length_mask(lengths: np.ndarray, l_max: int) -> np.ndarray:
    """(B, L) float mask: 1 at real tokens, 0 at padding."""
    return (np.arange(l_max)[None, :] < lengths[:, None]).astype(np.float64)


def attention_bias(lengths: np.ndarray, l_max: int) -> np.ndarray:
    """(B, L) additive logit bias: 0 at real tokens, -1e9 at padding."""
    return np.where(length_mask(lengths, l_max) > 0, 0.0, MASK_BIAS)


def _gru_step(wx: Linear, wh: Linear, x_t: Tensor, h: Tensor, hidden: int) -> Tensor:
    gx = wx(x_t)
    gh = wh(h)
    r = sigmoid(gx[:, :hidden] + gh[:, :hidden])
    z = sigmoid(gx[:, hidden : 2 * hidden] + gh[:, hidden : 2 * hidden])
    n = tanh(gx[:, 2 * hidden :] + r * gh[:, 2 * hidden :])
    return n + z * (h - n)


class TextEncoder(Module):
    """Embedding + single-layer bidirectional GRU.

    Word features are the concatenated per-step states of both directions
    (so word_dim must be even); the sentence feature projects the two
    final states. States freeze across padded steps, making features of a
    caption independent of how much padding follows it.
    """

    def __init__(self, rng: np.random.Generator, n_vocab: int, word_dim: int):
        if word_dim % 2:
            raise ValueError("word_dim must be even (two GRU directions)")
        self.hidden = word_dim // 2
        self.emb = Embedding(rng, n_vocab, word_dim)
        self.fw_x = Linear(rng, word_dim, 3 * self.hidden)
        self.fw_h = Linear(rng, self.hidden, 3 * self.hidden)
        self.bw_x = Linear(rng, word_dim, 3 * self.hidden)
        self.bw_h = Linear(rng, self.hidden, 3 * self.hidden)
        self.s_proj = Linear(rng, word_dim, word_dim)

    def encode(self, ids: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, Tensor]:
        """(B, L) int ids -> word features (B, D, L), sentence feature (B, D)."""
        B, L = ids.shape
        if L == 0:
            raise ValueError("encode needs at least one (possibly padded) position")
        if ids.min() < 0 or ids.max() >= self.emb.w.data.shape[0]:
            raise ValueError("token index out of vocabulary range")
        H = self.hidden
        emb = self.emb(ids)  # (B, L, D)
        mask = length_mask(lengths, L)  # (B, L)

        def run(direction: int, wx: Linear, wh: Linear) -> list[Tensor]:
            h = Tensor(np.zeros((B, H)))
            states: list[Tensor | None] = [None] * L
            order = range(L) if direction > 0 else range(L - 1, -1, -1)
            for t in order:
                m = Tensor(mask[:, t : t + 1])
                h_new = _gru_step(wx, wh, emb[:, t, :], h, H)
                h = h + m * (h_new - h)
                states[t] = h
            return states

        fw = run(+1, self.fw_x, self.fw_h)
        bw = run(-1, self.bw_x, self.bw_h)
        cols = [reshape(concat([fw[t], bw[t]], axis=1), (B, 2 * H, 1)) for t in range(L)]
        w = concat(cols, axis=2) * Tensor(mask[:, None, :])  # zero padded columns
        s = self.s_proj(concat([fw[L - 1], bw[0]], axis=1))
        return w, s


class ConditioningAugmenter(Module):
    """Gaussian reparameterization of the sentence feature.

    The log-variance head is clamped to [-10, 10] before exponentiation,
    which keeps the KL term finite for any caption.
    """

    def __init__(self, rng: np.random.Generator, word_dim: int, ca_dim: int):
        self.mu = Linear(rng, word_dim, ca_dim)
        self.logvar = Linear(rng, word_dim, ca_dim)

    def augment(self, s: Tensor, eps: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Returns (conditioning vector (B, C), per-sample KL (B,)).

        ``eps`` of zeros (or None) selects the posterior mean, which is
        how every inference path stays deterministic.
        """
        mu = self.mu(s)
        lv = clamp(self.logvar(s), -10.0, 10.0)
        if eps is None:
            eps = np.zeros(mu.data.shape)
        sigma = exp(lv * 0.5)
        s_tilde = mu + sigma * Tensor(eps)
        kl = tsum(mu * mu + exp(lv) - lv - 1.0, axis=1) * 0.5
        return s_tilde, kl
