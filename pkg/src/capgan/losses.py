"""All training objectives: adversarial, correlation, perceptual, matching, KL.

Every log argument is clamped below at 1e-8 so the worst-case loss stays
bounded near 20; a diagnostic counter records (and tests assert against)
any clamp actually firing on healthy traces.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, clamp, leaky_relu, log, log_softmax_rows, matmul, reshape, sqrt, tmean, transpose
from .layers import Conv2d, Linear, Module

LOG_FLOOR = 1e-8


class ClampStats:
    """Counts elements rescued by the log floor."""

    __slots__ = ("activations",)

    def __init__(self):
        self.activations = 0


def safe_log(t: Tensor, stats: ClampStats | None = None) -> Tensor:
    if stats is not None:
        stats.activations += int((t.data < LOG_FLOOR).sum())
    return log(clamp(t, lo=LOG_FLOOR))


def _check_probability(name: str, t: Tensor) -> None:
    if (t.data < 0).any() or (t.data > 1).any():
        raise ValueError(f"{name} probability outside [0, 1]")


@dataclass
class LossBreakdown:
    """Named components with their weights; total = sum of weight*component."""

    components: dict[str, float]
    weights: dict[str, float]
    total: float
    tensor: Tensor | None = None
    stage_components: dict[str, list[float]] = field(default_factory=dict)

    def weighted_sum(self) -> float:
        return float(sum(self.weights[k] * v for k, v in self.components.items()))

    def describe(self) -> str:
        parts = " ".join(f"{k}={v:.4f}" for k, v in self.components.items())
        return f"total={self.total:.4f} {parts}"


class PerceptualExtractor(Module):
    """Fixed (never trained) conv stack; the tap layer defines the feature space.

    Random frozen features keep the loss's role of pinning text-irrelevant
    content without any pretrained weights. ``identity()`` builds a
    pass-through variant for closed-form tests.
    """

    def __init__(self, rng: np.random.Generator | None, tap: int = 2):
        self.tap = tap
        self.convs: list[Conv2d] = []
        if rng is not None:
            self.convs = [
                Conv2d(rng, 3, 8, 3, padding="zero", trainable=False),
                Conv2d(rng, 8, 16, 3, stride=2, padding="zero", trainable=False),
                Conv2d(rng, 16, 16, 3, padding="zero", trainable=False),
            ]

    @classmethod
    def identity(cls) -> "PerceptualExtractor":
        return cls(None, tap=0)

    def extract(self, img: Tensor) -> Tensor:
        if not self.convs or self.tap == 0:
            return img
        h = img
        for conv in self.convs[: self.tap]:
            h = leaky_relu(conv(h))
        return h


def perceptual_loss(gen: Tensor, real: Tensor, extractor: PerceptualExtractor) -> Tensor:
    """Mean squared distance between tap activations (Frobenius over C,H,W)."""
    if gen.shape != real.shape:
        raise ValueError(f"resolution mismatch: {gen.shape} vs {real.shape}")
    a = extractor.extract(gen)
    b = extractor.extract(real)
    d = a - b
    return tmean(d * d)


class MatchingScorer(Module):
    """Global image/text embeddings scored by a symmetric contrastive loss."""

    def __init__(self, rng: np.random.Generator, size: int, word_dim: int, tau: float):
        self.conv1 = Conv2d(rng, 3, 16, 3, stride=2, padding="zero")
        self.conv2 = Conv2d(rng, 16, 32, 3, stride=2, padding="zero")
        self.img_proj = Linear(rng, 32, word_dim)
        self.txt_proj = Linear(rng, word_dim, word_dim)
        self.tau = tau

    def image_embedding(self, img: Tensor) -> Tensor:
        h = leaky_relu(self.conv1(img))
        h = leaky_relu(self.conv2(h))
        pooled = tmean(reshape(h, (h.shape[0], h.shape[1], -1)), axis=2)
        return self.img_proj(pooled)

    def loss(self, img: Tensor, s: Tensor) -> Tensor:
        e_img = self.image_embedding(img)
        e_txt = self.txt_proj(s)
        return matching_loss(e_img, e_txt, self.tau)


def matching_loss(e_img: Tensor, e_txt: Tensor, tau: float) -> Tensor:
    """Symmetric batch-contrastive cross-entropy over cosine logits / tau.

    Diagonal pairs are the positives. B=1 gives exactly 0 (softmax of a
    single candidate).
    """
    B = e_img.shape[0]
    ni = sqrt((e_img * e_img).sum(axis=1, keepdims=True) + 1e-12)
    nt = sqrt((e_txt * e_txt).sum(axis=1, keepdims=True) + 1e-12)
    ui = e_img / ni
    ut = e_txt / nt
    logits = matmul(ui, transpose(ut, (1, 0))) * (1.0 / tau)  # (B, B)
    eye = Tensor(np.eye(B))
    img2txt = -(log_softmax_rows(logits) * eye).sum() * (1.0 / B)
    txt2img = -(log_softmax_rows(transpose(logits, (1, 0))) * eye).sum() * (1.0 / B)
    return (img2txt + txt2img) * 0.5


@dataclass
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 5.0
    kl_weight: float = 0.05


def generator_loss(
    fake_probs: list[tuple[Tensor, Tensor]],
    corre_fake: dict[int, Tensor],
    perceptual: list[Tensor] | None,
    matching: Tensor | None,
    kl: Tensor | None,
    weights: LossWeights,
    stats: ClampStats | None = None,
) -> LossBreakdown:
    """Assembles the full generator objective.

    fake_probs: per-stage (unconditional, conditional) probabilities on
    generated images; corre_fake: stage index -> per-sample correlation of
    the fake image with the matched caption; perceptual: per-stage scalar
    losses (None when ablated); matching/kl: scalars or None.
    """
    if not fake_probs:
        raise ValueError("generator_loss needs at least one stage")
    adv_u_terms, adv_c_terms, u_stage, c_stage = [], [], [], []
    for u, c in fake_probs:
        _check_probability("unconditional", u)
        _check_probability("conditional", c)
        tu = tmean(safe_log(u, stats)) * -0.5
        tc = tmean(safe_log(c, stats)) * -0.5
        adv_u_terms.append(tu)
        adv_c_terms.append(tc)
        u_stage.append(float(tu.data))
        c_stage.append(float(tc.data))
    total = adv_u_terms[0]
    for t in adv_u_terms[1:] + adv_c_terms:
        total = total + t
    comps = {
        "adv_uncond": float(sum(u_stage)),
        "adv_cond": float(sum(c_stage)),
        "perceptual": 0.0,
        "correlation": 0.0,
        "matching": 0.0,
        "kl": 0.0,
    }
    stage_comps: dict[str, list[float]] = {"adv_uncond": u_stage, "adv_cond": c_stage}
    if perceptual:
        p = perceptual[0]
        for t in perceptual[1:]:
            p = p + t
        comps["perceptual"] = float(p.data)
        stage_comps["perceptual"] = [float(t.data) for t in perceptual]
        total = total + p * weights.lambda2
    if corre_fake:
        corr_vals = []
        c = None
        for stage in sorted(corre_fake):
            term = tmean(safe_log(1.0 - corre_fake[stage], stats))
            corr_vals.append(float(term.data))
            c = term if c is None else c + term
        comps["correlation"] = float(sum(corr_vals))
        stage_comps["correlation"] = corr_vals
        total = total + c * weights.lambda3
    if matching is not None:
        comps["matching"] = float(matching.data)
        total = total + matching * weights.lambda4
    if kl is not None:
        klm = tmean(kl)
        comps["kl"] = float(klm.data)
        total = total + klm * weights.kl_weight
    w = {
        "adv_uncond": 1.0,
        "adv_cond": 1.0,
        "perceptual": weights.lambda2,
        "correlation": weights.lambda3,
        "matching": weights.lambda4,
        "kl": weights.kl_weight,
    }
    return LossBreakdown(comps, w, float(total.data), total, stage_comps)


def discriminator_loss(
    real_probs: list[tuple[Tensor, Tensor]],
    fake_probs: list[tuple[Tensor, Tensor]],
    corre_matched: dict[int, Tensor],
    corre_mismatched: dict[int, Tensor],
    weights: LossWeights,
    stats: ClampStats | None = None,
) -> LossBreakdown:
    """Four-term adversarial loss per stage plus word-level correlation terms.

    The correlation terms push corre(real, matched) toward 1 and
    corre(real, mismatched) toward 0.
    """
    if len(real_probs) != len(fake_probs) or not real_probs:
        raise ValueError("discriminator_loss needs matching real/fake stage lists")
    if set(corre_matched) != set(corre_mismatched):
        raise ValueError("matched/mismatched correlation stages differ")
    u_stage, c_stage = [], []
    total = None
    for (ur, cr), (uf, cf) in zip(real_probs, fake_probs):
        for name, t in (("real uncond", ur), ("real cond", cr), ("fake uncond", uf), ("fake cond", cf)):
            _check_probability(name, t)
        tu = (tmean(safe_log(ur, stats)) + tmean(safe_log(1.0 - uf, stats))) * -0.5
        tc = (tmean(safe_log(cr, stats)) + tmean(safe_log(1.0 - cf, stats))) * -0.5
        u_stage.append(float(tu.data))
        c_stage.append(float(tc.data))
        term = tu + tc
        total = term if total is None else total + term
    comps = {"adv_uncond": float(sum(u_stage)), "adv_cond": float(sum(c_stage)), "correlation": 0.0}
    stage_comps: dict[str, list[float]] = {"adv_uncond": u_stage, "adv_cond": c_stage}
    if corre_matched:
        corr_vals = []
        c = None
        for stage in sorted(corre_matched):
            term = tmean(safe_log(1.0 - corre_matched[stage], stats)) + tmean(
                safe_log(corre_mismatched[stage], stats)
            )
            corr_vals.append(float(term.data))
            c = term if c is None else c + term
        comps["correlation"] = float(sum(corr_vals))
        stage_comps["correlation"] = corr_vals
        total = total + c * weights.lambda1
    w = {"adv_uncond": 1.0, "adv_cond": 1.0, "correlation": weights.lambda1}
    return LossBreakdown(comps, w, float(total.data), total, stage_comps)
