"""Alternating adversarial training, evaluation metrics, and checkpoints.

One train step: a discriminator update on real images against detached
fakes (plus word-level correlation on matched and mismatched captions),
then a generator update through the freshly updated discriminators. All
randomness for a step comes from one counter-indexed stream draw, so the
whole run is a pure function of (seed, config).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .checkpoint import (
    CheckpointPayload,
    CheckpointShapeError,
    load_checkpoint_file,
    save_checkpoint_file,
)
from .config import TrainConfig, config_from_tensors, config_to_tensors
from .data import COLOR_ANCHORS, apply_edit, random_edit, scene_at
from .imgio import pgm_bytes, ppm_bytes
from .losses import ClampStats, LossBreakdown, LossWeights, discriminator_loss, generator_loss, perceptual_loss
from .model import CapGanModel
from .seeding import SALT_EVAL, SALT_GENERATE, SeededStream, stream_rng
from .text import attention_bias


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, breakdown: LossBreakdown | None = None):
        super().__init__(message)
        self.breakdown = breakdown


class Adam:
    """Adaptive-moment optimizer over an ordered (name, tensor) list."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float, beta1: float, beta2: float, eps: float = 1e-8):
        self.names = [n for n, _ in params]
        self.params = [t for _, t in params]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(t.data) for t in self.params]
        self.v = [np.zeros_like(t.data) for t in self.params]

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/t": np.array(float(self.t))}
        for name, m, v in zip(self.names, self.m, self.v):
            out[f"{prefix}/m/{name}"] = m
            out[f"{prefix}/v/{name}"] = v
        return out

    def load_state(self, prefix: str, table: dict[str, np.ndarray]) -> None:
        key = f"{prefix}/t"
        if key not in table:
            raise CheckpointShapeError(f"optimizer state missing {key}")
        self.t = int(float(table[key]))
        for i, name in enumerate(self.names):
            for slot, target in (("m", self.m), ("v", self.v)):
                k = f"{prefix}/{slot}/{name}"
                if k not in table:
                    raise CheckpointShapeError(f"optimizer state missing {k}")
                if table[k].shape != target[i].shape:
                    raise CheckpointShapeError(f"optimizer entry {k} has shape {table[k].shape}")
                target[i] = table[k].copy()


@dataclass
class Batch:
    ids: np.ndarray  # (B, L) int token indices
    lengths: np.ndarray  # (B,)
    bias: np.ndarray  # (B, L) attention logit bias
    images: list[np.ndarray]  # per stage (B, 3, size, size)
    indices: list[int]


@dataclass
class TrainState:
    cfg: TrainConfig
    model: CapGanModel
    opt_gen: Adam
    opt_disc: Adam
    stream: SeededStream
    step: int = 0
    clamp_stats: ClampStats = field(default_factory=ClampStats)

    @property
    def weights(self) -> LossWeights:
        c = self.cfg
        return LossWeights(c.lambda1, c.lambda2, c.lambda3, c.lambda4, c.kl_weight)


def init_state(cfg: TrainConfig) -> TrainState:
    model = CapGanModel(cfg)
    opt_gen = Adam(model.generator_group(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_disc = Adam(model.discriminator_group(), cfg.lr, cfg.beta1, cfg.beta2)
    return TrainState(cfg, model, opt_gen, opt_disc, SeededStream(cfg.seed))


def _downsample2x(img: np.ndarray) -> np.ndarray:
    B, C, H, W = img.shape
    return img.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))


def image_pyramid(final: np.ndarray, sizes: tuple[int, ...]) -> list[np.ndarray]:
    """Box-filtered halvings down to each stage size, coarse first.

    ``final`` may render larger than the last stage (the dataset has one
    fixed resolution, stage sizes are config); it is halved to fit. A
    final stage above the render size has nothing honest to upsample
    from and is an error.
    """
    cur = final
    if cur.shape[-1] < sizes[-1]:
        raise ValueError(f"data renders {cur.shape[-1]}px, below the final stage {sizes[-1]}px")
    while cur.shape[-1] > sizes[-1]:
        cur = _downsample2x(cur)
    if cur.shape[-1] != sizes[-1]:
        raise ValueError(f"final stage {sizes[-1]}px must be a power-of-two division of {final.shape[-1]}px")
    pyramid = {sizes[-1]: cur}
    for size in reversed(sizes[:-1]):
        cur = _downsample2x(cur)
        pyramid[size] = cur
    return [pyramid[s] for s in sizes]


# scene synthesis is pure in (seed, index); memoizing it trades ~200 MB for
# skipping regeneration every epoch (the trainer cycles scenes many times)
_scene_cache: dict[tuple[int, int], object] = {}
_SCENE_CACHE_CAP = 12000


def _cached_scene(seed: int, index: int):
    key = (seed, index)
    scene = _scene_cache.get(key)
    if scene is None:
        scene = scene_at(seed, index)
        if len(_scene_cache) >= _SCENE_CACHE_CAP:
            _scene_cache.clear()
        _scene_cache[key] = scene
    return scene


def fetch_batch(cfg: TrainConfig, model: CapGanModel, step: int) -> Batch:
    indices = [(step * cfg.batch_size + j) % cfg.train_scenes for j in range(cfg.batch_size)]
    scenes = [_cached_scene(cfg.seed, i) for i in indices]
    ids, lengths = model.encode_tokens([s.caption for s in scenes])
    bias = attention_bias(lengths, cfg.l_max)
    final = np.stack([s.image for s in scenes])
    return Batch(ids, lengths, bias, image_pyramid(final, cfg.stage_sizes), indices)


def _mismatch_permutation(rng: np.random.Generator, batch: int) -> np.ndarray:
    """Index j != i drawn uniformly for each i (needs batch >= 2)."""
    if batch < 2:
        return np.zeros(batch, dtype=np.int64)
    offsets = rng.integers(1, batch, size=batch)
    return (np.arange(batch) + offsets) % batch


def train_step(state: TrainState, batch: Batch) -> tuple[LossBreakdown, LossBreakdown]:
    cfg, model = state.cfg, state.model
    B = batch.ids.shape[0]
    rng = state.stream.next_rng()
    z = rng.standard_normal((B, cfg.noise_dim))
    eps = rng.standard_normal((B, cfg.ca_dim))
    perm = _mismatch_permutation(rng, B)

    # one generator graph serves both phases: the discriminator sees the
    # fakes detached, the generator backpropagates through them afterwards
    w, s = model.text.encode(batch.ids, batch.lengths)
    s_tilde, kl = model.ca.augment(s, eps)
    gen_out = model.gen(s_tilde, Tensor(z), w, batch.bias)
    reals = [Tensor(img) for img in batch.images]

    # -- discriminator update -------------------------------------------
    # real and fake are both constants here, so one batched trunk pass
    # scores them together and the probabilities are sliced apart
    if cfg.d_only or state.step % cfg.d_every == 0:
        s_d2 = Tensor(np.concatenate([s.data, s.data]))
        real_probs = []
        fake_probs_d = []
        for disc, real, img in zip(model.discs, reals, gen_out.images):
            u, c = disc(Tensor(np.concatenate([real.data, img.data])), s_d2)
            real_probs.append((u[:B], c[:B]))
            fake_probs_d.append((u[B:], c[B:]))
        corre_m: dict[int, Tensor] = {}
        corre_mm: dict[int, Tensor] = {}
        if model.word_disc is not None:
            if cfg.share_text_encoder:
                w_d = Tensor(w.data)
            else:
                w_d, _ = model.word_features_for_disc(batch.ids, batch.lengths)
            w_mm = Tensor(w_d.data[perm])
            bias_mm = batch.bias[perm]
            len_mm = batch.lengths[perm]
            for k, size in enumerate(cfg.stage_sizes):
                if size not in cfg.word_disc_sizes:
                    continue
                regions = model.word_disc.encode_regions(reals[k])
                corre_m[k], _, _ = model.word_disc.correlation(w_d, batch.bias, batch.lengths, regions=regions)
                corre_mm[k], _, _ = model.word_disc.correlation(w_mm, bias_mm, len_mm, regions=regions)
        d_breakdown = discriminator_loss(real_probs, fake_probs_d, corre_m, corre_mm, state.weights, state.clamp_stats)
        if not np.isfinite(d_breakdown.total):
            raise TrainingDiverged(f"discriminator loss diverged at step {state.step}: {d_breakdown.describe()}", d_breakdown)
        d_breakdown.tensor.backward()
        state.opt_disc.step()
        model.zero_all_grads()
    else:
        # d_every > 1 thins discriminator updates to keep the two-player
        # race balanced; the rng stream advanced above regardless
        d_breakdown = LossBreakdown({}, {}, 0.0, None)

    if cfg.d_only:
        g_breakdown = LossBreakdown({}, {}, 0.0, None)
        state.step += 1
        return d_breakdown, g_breakdown

    # -- generator update ------------------------------------------------
    fake_probs_g = [disc(img, s) for disc, img in zip(model.discs, gen_out.images)]
    corre_fake: dict[int, Tensor] = {}
    if model.word_disc is not None:
        if cfg.share_text_encoder:
            w_g = w
        else:
            w_g, _ = model.word_features_for_disc(batch.ids, batch.lengths)
        for k, size in enumerate(cfg.stage_sizes):
            if size not in cfg.word_disc_sizes:
                continue
            corre_fake[k], _, _ = model.word_disc.correlation(w_g, batch.bias, batch.lengths, gen_out.images[k])
    perceptual = None
    if model.perceptual is not None:
        perceptual = [perceptual_loss(img, real, model.perceptual) for img, real in zip(gen_out.images, reals)]
    matching = model.matcher.loss(gen_out.images[-1], s)
    g_breakdown = generator_loss(fake_probs_g, corre_fake, perceptual, matching, kl, state.weights, state.clamp_stats)
    if not np.isfinite(g_breakdown.total):
        raise TrainingDiverged(f"generator loss diverged at step {state.step}: {g_breakdown.describe()}", g_breakdown)
    g_breakdown.tensor.backward()
    state.opt_gen.step()
    model.zero_all_grads()

    state.step += 1
    return d_breakdown, g_breakdown


def train(state: TrainState, out_dir: str | None = None, log_fn=None) -> TrainState:
    """Run to cfg.total_steps, checkpointing at the configured cadence."""
    cfg = state.cfg
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    while state.step < cfg.total_steps:
        batch = fetch_batch(cfg, state.model, state.step)
        d_bd, g_bd = train_step(state, batch)
        step = state.step
        if log_fn is not None:
            log_fn(step, d_bd, g_bd)
        if out_dir and (step % cfg.checkpoint_every == 0 or step == cfg.total_steps):
            save_state(state, os.path.join(out_dir, f"ckpt_{step:06d}.bin"))
    if out_dir:
        save_state(state, os.path.join(out_dir, "latest.bin"))
    return state


# -- checkpoint glue ---------------------------------------------------------


def state_payload(state: TrainState) -> CheckpointPayload:
    tensors = {f"model/{name}": t.data for name, t in state.model.named_tensors()}
    tensors.update(config_to_tensors(state.cfg))
    optimizer: dict[str, np.ndarray] = {}
    optimizer.update(state.opt_gen.state_tensors("gen"))
    optimizer.update(state.opt_disc.state_tensors("disc"))
    return CheckpointPayload(state.step, tensors, optimizer, state.stream.state_bytes())


def save_state(state: TrainState, path: str) -> None:
    save_checkpoint_file(state_payload(state), path)


def load_state(path: str) -> TrainState:
    payload = load_checkpoint_file(path)
    cfg = config_from_tensors(payload.tensors)
    state = init_state(cfg)
    for name, tensor in state.model.named_tensors():
        key = f"model/{name}"
        if key not in payload.tensors:
            raise CheckpointShapeError(f"checkpoint missing tensor {key}")
        arr = payload.tensors[key]
        if arr.shape != tensor.data.shape:
            raise CheckpointShapeError(f"tensor {key} has shape {arr.shape}, expected {tensor.data.shape}")
        tensor.data = arr.copy()
    state.opt_gen.load_state("gen", payload.optimizer)
    state.opt_disc.load_state("disc", payload.optimizer)
    state.stream = SeededStream.from_state_bytes(payload.rng_state)
    state.step = payload.step
    return state


# -- evaluation ---------------------------------------------------------------


def pixel_sq_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(3, H, W) pair -> (H, W) per-pixel squared distance (channel mean)."""
    d = a - b
    return (d * d).mean(axis=0)


def l2_metrics(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> dict[str, float]:
    """Full/inside/outside split of the mean per-pixel squared distance.

    Inside and outside are normalized by the TOTAL pixel count, so they
    sum to l2_full and each is bounded by it.
    """
    d = pixel_sq_distance(a, b)
    n = float(d.size)
    return {
        "l2_full": float(d.mean()),
        "l2_inside_mask": float(d[mask].sum() / n),
        "l2_outside_mask": float(d[~mask].sum() / n),
    }


def evaluate_manipulation(model: CapGanModel, n_pairs: int, eval_seed: int | None = None) -> dict[str, float]:
    """Render (caption, edited caption) with the same z; measure edit locality."""
    cfg = model.cfg
    seed = cfg.seed if eval_seed is None else eval_seed
    totals = {"l2_full": 0.0, "l2_inside_mask": 0.0, "l2_outside_mask": 0.0}
    flips = 0
    for i in range(n_pairs):
        scene = scene_at(cfg.seed, 10000 + i)
        rng = stream_rng(seed, SALT_EVAL, i)
        edit = random_edit(scene, rng)
        edited_tokens, mask = apply_edit(scene, edit)
        z = rng.standard_normal((1, cfg.noise_dim))
        base = model.render([scene.caption], z).final[0]
        edited = model.render([edited_tokens], z).final[0]
        m = l2_metrics(base, edited, mask)
        for k in totals:
            totals[k] += m[k]
        mean_rgb = edited[:, mask].mean(axis=1)
        d_new = np.linalg.norm(mean_rgb - COLOR_ANCHORS[edit.new_color])
        d_old = np.linalg.norm(mean_rgb - COLOR_ANCHORS[scene.part_colors[edit.part]])
        flips += int(d_new < d_old)
    out = {k: v / n_pairs for k, v in totals.items()}
    out["attr_flip_rate"] = flips / n_pairs
    return out


def correlation_gap(state: TrainState, n_scenes: int) -> float:
    """mean corre(real, matched) - mean corre(real, mismatched) on eval scenes."""
    model = state.model
    if model.word_disc is None:
        raise ValueError("model has no word-level discriminator")
    cfg = state.cfg
    gap_m, gap_mm = [], []
    batch_size = 50
    for start in range(0, n_scenes, batch_size):
        idxs = range(10000 + start, 10000 + min(start + batch_size, n_scenes))
        scenes = [scene_at(cfg.seed, i) for i in idxs]
        ids, lengths = model.encode_tokens([s.caption for s in scenes])
        bias = attention_bias(lengths, cfg.l_max)
        images = np.stack([s.image for s in scenes])
        n = len(scenes)
        perm = np.roll(np.arange(n), 1)  # deterministic mismatch: shift by one
        with no_grad():
            w, _ = model.word_features_for_disc(ids, lengths)
            real = Tensor(images)
            m, _, _ = model.word_disc.correlation(w, bias, lengths, real)
            w_mm = Tensor(w.data[perm])
            mm, _, _ = model.word_disc.correlation(w_mm, bias[perm], lengths[perm], real)
        gap_m.extend(m.data.tolist())
        gap_mm.extend(mm.data.tolist())
    return float(np.mean(gap_m) - np.mean(gap_mm))


# -- attention dump -----------------------------------------------------------


def dump_attention(model: CapGanModel, caption: list[str], out_dir: str, z_seed: int = 0) -> dict[str, object]:
    """Per-word spatial heatmaps and a per-channel top-word report.

    Returns a manifest: {"heatmaps": [paths], "report": path}.
    """
    os.makedirs(out_dir, exist_ok=True)
    cfg = model.cfg
    rng = stream_rng(z_seed, SALT_GENERATE, 0)
    z = rng.standard_normal((1, cfg.noise_dim))
    result = model.render([caption], z)
    n_words = int(result.lengths[0])
    heatmaps: list[str] = []
    for stage in sorted(result.betas):
        beta = result.betas[stage][0]  # (H*W, L)
        side = int(np.sqrt(beta.shape[0]))
        for i in range(n_words):
            m = beta[:, i].reshape(side, side)
            span = m.max() - m.min()
            norm = (m - m.min()) / span if span > 0 else np.zeros_like(m)
            path = os.path.join(out_dir, f"stage{stage}_word{i:02d}_{caption[i]}.pgm")
            with open(path, "wb") as fh:
                fh.write(pgm_bytes(norm))
            heatmaps.append(path)
    report_path = os.path.join(out_dir, "channel_words.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        for stage in sorted(result.alphas):
            alpha = result.alphas[stage][0]  # (C, L)
            for c in range(alpha.shape[0]):
                j = int(np.argmax(alpha[c, :n_words])) if n_words else 0
                fh.write(f"stage{stage} channel{c:02d} {caption[j]}\n")
    with open(os.path.join(out_dir, "image.ppm"), "wb") as fh:
        fh.write(ppm_bytes(result.final[0]))
    return {"heatmaps": heatmaps, "report": report_path}
