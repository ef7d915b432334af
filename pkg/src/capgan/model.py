"""Full model assembly: text encoder, generator, discriminators, scorers.

Construction order is fixed so tensor names (and therefore checkpoints)
are canonical. Initialization draws from dedicated seeded streams, making
(seed, config) -> parameters a pure function.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .config import TrainConfig
from .data import build_vocabulary
from .discriminator import StageDiscriminator, WordLevelDiscriminator
from .generator import Generator
from .layers import Module
from .losses import MatchingScorer, PerceptualExtractor
from .seeding import SALT_INIT, SALT_PERCEPTUAL, stream_rng
from .text import ConditioningAugmenter, TextEncoder, attention_bias, pad_captions


class CapGanModel(Module):
    def __init__(self, cfg: TrainConfig):
        rng = stream_rng(cfg.seed, SALT_INIT, 0)
        self.cfg = cfg
        self.vocab = build_vocabulary()
        self.text = TextEncoder(rng, len(self.vocab), cfg.word_dim)
        self.ca = ConditioningAugmenter(rng, cfg.word_dim, cfg.ca_dim)
        self.gen = Generator(
            rng,
            cfg.k_stages,
            cfg.stage_sizes[0],
            cfg.channels,
            cfg.word_dim,
            cfg.ca_dim,
            cfg.noise_dim,
            use_channel_attn=not cfg.no_channel_attn,
        )
        self.discs = [StageDiscriminator(rng, size, cfg.word_dim) for size in cfg.stage_sizes]
        if cfg.no_word_disc:
            self.word_disc = None
        else:
            self.word_disc = WordLevelDiscriminator(
                rng,
                list(cfg.word_disc_sizes),
                cfg.channels,
                cfg.word_dim,
                adaptive_pooling=cfg.text_adaptive_pooling,
            )
            if not cfg.share_text_encoder:
                self.word_text = TextEncoder(rng, len(self.vocab), cfg.word_dim)
        self.matcher = MatchingScorer(rng, cfg.stage_sizes[-1], cfg.word_dim, cfg.tau)
        self.perceptual = (
            None if cfg.no_perceptual else PerceptualExtractor(stream_rng(cfg.seed, SALT_PERCEPTUAL, 0))
        )

    # Module.named_tensors walks vars(); skip the non-module fields.
    def named_tensors(self, prefix: str = ""):
        skip = {"cfg", "vocab"}
        for name, value in vars(self).items():
            if name in skip or value is None:
                continue
            key = name if prefix == "" else f"{prefix}.{name}"
            if isinstance(value, Module):
                yield from value.named_tensors(key)
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{key}.{i}")

    def generator_group(self) -> list[tuple[str, Tensor]]:
        prefixes = ("text.", "ca.", "gen.", "matcher.")
        return [(n, t) for n, t in self.named_tensors() if t.requires_grad and n.startswith(prefixes)]

    def discriminator_group(self) -> list[tuple[str, Tensor]]:
        prefixes = ("discs.", "word_disc.", "word_text.")
        return [(n, t) for n, t in self.named_tensors() if t.requires_grad and n.startswith(prefixes)]

    def zero_all_grads(self) -> None:
        for _, t in self.named_tensors():
            t.grad = None

    def word_features_for_disc(self, ids: np.ndarray, lengths: np.ndarray):
        """Word/sentence features feeding the word-level discriminator."""
        encoder = getattr(self, "word_text", None) or self.text
        return encoder.encode(ids, lengths)

    # -- inference conveniences -----------------------------------------

    def encode_tokens(self, token_lists: list[list[str]], strict: bool = True):
        encoded = [self.vocab.encode(tokens, strict=strict) for tokens in token_lists]
        ids, lengths = pad_captions(encoded, self.cfg.l_max)
        return ids, lengths

    def render(self, token_lists: list[list[str]], z: np.ndarray) -> "RenderResult":
        """Deterministic forward pass: conditioning noise pinned to zero."""
        with no_grad():
            ids, lengths = self.encode_tokens(token_lists)
            bias = attention_bias(lengths, self.cfg.l_max)
            w, s = self.text.encode(ids, lengths)
            s_tilde, _ = self.ca.augment(s, eps=None)
            out = self.gen(s_tilde, Tensor(z), w, bias)
        return RenderResult(
            images=[img.data for img in out.images],
            alphas={k: a.data for k, a in out.alphas.items()},
            betas={k: b.data for k, b in out.betas.items()},
            lengths=lengths,
        )


@dataclass
class RenderResult:
    images: list[np.ndarray]  # per stage, (B, 3, size, size)
    alphas: dict[int, np.ndarray]  # stage -> (B, C, L)
    betas: dict[int, np.ndarray]  # stage -> (B, H*W, L)
    lengths: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.images[-1]
