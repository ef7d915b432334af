"""Headline acceptance checks, one test per criterion.

Each test prints a PASS/FAIL verdict line straight to the terminal
(bypassing capture) so the outcome is readable in any pytest run.

Criteria that need trained models load them from runs/acceptance/,
training on the spot when the cache is cold (see tests/_artifacts.py;
a cold cache takes roughly 2.5 hours on one core). Tests that may
train are marked `slow`; deselect with `-m "not slow"` for a quick,
training-free pass over the numeric criteria.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from _artifacts import ensure_trained, run_dir
from capgan.autodiff import (
    CosineFlags,
    Tensor,
    add,
    channel_norm,
    clamp,
    column_cosine,
    concat,
    conv2d,
    cosine_similarity,
    div,
    embedding,
    exp,
    expand_spatial,
    finite_diff_grad_check,
    getitem,
    leaky_relu,
    log,
    log_softmax_rows,
    matmul,
    mul,
    no_grad,
    power,
    reshape,
    sigmoid,
    softmax_rows,
    sqrt,
    tanh,
    tmean,
    trace_kinks,
    transpose,
    tsum,
    upsample2x,
)
from capgan.checkpoint import checkpoint_bytes, load_checkpoint_file
from capgan.config import ConfigError, TrainConfig, parse_config_text
from capgan.discriminator import WordLevelDiscriminator
from capgan.generator import channel_attention, spatial_attention
from capgan.imgio import parse_pgm, parse_ppm, pgm_bytes, ppm_bytes
from capgan.losses import (
    ClampStats,
    LossWeights,
    PerceptualExtractor,
    discriminator_loss,
    generator_loss,
    perceptual_loss,
)
from capgan.text import attention_bias
from capgan.training import (
    correlation_gap,
    evaluate_manipulation,
    fetch_batch,
    init_state,
    load_state,
    save_state,
    train,
)
from conftest import small_config


def _verdict(capsys, name: str, notes: list[str], detail: str) -> None:
    ok = not notes
    with capsys.disabled():
        tail = detail if ok else "; ".join(notes) + " | " + detail
        print(f"\n[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'} - {tail}")
    assert ok, f"{name}: {'; '.join(notes)}"


def _trained(tag: str, capsys):
    def log(msg):
        with capsys.disabled():
            print(f"\n[acceptance] {msg}")

    return ensure_trained(tag, log)


# ---------------------------------------------------------------------------
# Formats: checkpoint byte identity, image headers, config strictness
# ---------------------------------------------------------------------------


def test_formats(tiny_state, tmp_path, capsys):
    notes = []

    path1, path2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_state(tiny_state, str(path1))
    save_state(load_state(str(path1)), str(path2))
    bytes1, bytes2 = path1.read_bytes(), path2.read_bytes()
    if bytes1 != bytes2:
        notes.append("checkpoint save/load/save not byte-identical")
    if checkpoint_bytes(load_checkpoint_file(str(path1))) != bytes1:
        notes.append("serializer bytes differ from file bytes")

    rng = np.random.default_rng(0)
    img = rng.uniform(-1, 1, (3, 5, 7))
    data = ppm_bytes(img)
    if not data.startswith(b"P6\n7 5\n255\n"):
        notes.append("PPM header not as documented")
    if parse_ppm(data).shape != (3, 5, 7):
        notes.append("PPM round trip shape mismatch")
    commented = b"P6\n# comment line\n 7  5 \n255\n" + data.split(b"255\n", 1)[1]
    if not np.array_equal(parse_ppm(commented), parse_ppm(data)):
        notes.append("PPM comment/whitespace parsing broken")
    gdata = pgm_bytes(rng.uniform(0, 1, (4, 6)))
    if not gdata.startswith(b"P5\n6 4\n255\n") or parse_pgm(gdata).shape != (4, 6):
        notes.append("PGM header or round trip broken")

    try:
        parse_config_text("definitely_unknown_key=3\n")
        notes.append("config accepted an unknown key")
    except ConfigError:
        pass
    try:
        parse_config_text("seed=1\nseed=2\n")
        notes.append("config accepted a duplicate key")
    except ConfigError:
        pass

    _verdict(capsys, "formats", notes,
             "checkpoint byte identity; PPM/PGM headers parse; config rejects unknown/duplicate keys")


# ---------------------------------------------------------------------------
# Closed-form losses
# ---------------------------------------------------------------------------


def test_closed_form_losses(capsys):
    notes = []
    weights = LossWeights()
    stats = ClampStats()

    perfect = discriminator_loss(
        [(Tensor(np.ones(2)), Tensor(np.ones(2)))],
        [(Tensor(np.zeros(2)), Tensor(np.zeros(2)))],
        {}, {}, weights, stats,
    )
    if perfect.total != 0.0:
        notes.append(f"perfect discriminator loss {perfect.total!r} != 0")

    half = Tensor(np.full(3, 0.5))
    halves = discriminator_loss([(half, half)], [(half, half)], {}, {}, weights, stats)
    if abs(halves.total - 2.0 * math.log(2.0)) > 1e-12:
        notes.append(f"all-0.5 loss {halves.total!r} != 2 log 2")

    ident = PerceptualExtractor.identity()
    rng = np.random.default_rng(3)
    a = Tensor(rng.uniform(-1, 1, (2, 3, 4, 4)))
    if perceptual_loss(a, Tensor(a.data.copy()), ident).data != 0.0:
        notes.append("identical images give nonzero perceptual loss")
    unit = perceptual_loss(a, Tensor(a.data + 1.0), ident)
    if abs(unit.data - 1.0) > 1e-12:
        notes.append(f"unit offset perceptual loss {float(unit.data)!r} != 1")
    bump = np.zeros((1, 3, 4, 4))
    bump[0, 1, 2, 3] = 0.3
    single = perceptual_loss(Tensor(bump), Tensor(np.zeros((1, 3, 4, 4))), ident)
    if abs(single.data - 0.3 ** 2 / 48.0) > 1e-12:
        notes.append("single-pixel perceptual loss off closed form")

    _verdict(capsys, "closed-form-losses", notes,
             "perfect-D = 0 exactly; all-0.5 = 2 log 2 within 1e-12; identity-extractor forms within 1e-12")


# ---------------------------------------------------------------------------
# Attention correctness: normalization sums and brute-force oracles
# ---------------------------------------------------------------------------


def _random_lengths(rng, B, L):
    lengths = rng.integers(1, L + 1, size=B)
    return lengths, attention_bias(lengths, L)


def _softmax_row(vals):
    m = max(vals)
    e = [math.exp(v - m) for v in vals]
    s = sum(e)
    return [v / s for v in e]


def _oracle_channel(w, bias, v, proj):
    B, D, L = w.shape
    _, C, H, W = v.shape
    attended = np.zeros((B, C, H * W))
    alpha = np.zeros((B, C, L))
    for bi in range(B):
        wt = np.zeros((H * W, L))
        for p in range(H * W):
            for i in range(L):
                wt[p, i] = sum(proj[p, d] * w[bi, d, i] for d in range(D))
        vf = v[bi].reshape(C, H * W)
        for c in range(C):
            logits = [sum(vf[c, p] * wt[p, i] for p in range(H * W)) + bias[bi, i] for i in range(L)]
            alpha[bi, c] = _softmax_row(logits)
            for p in range(H * W):
                attended[bi, c, p] = sum(alpha[bi, c, i] * wt[p, i] for i in range(L))
    return attended.reshape(B, C, H, W), alpha


def _oracle_spatial(w, bias, v, proj):
    B, D, L = w.shape
    _, C, H, W = v.shape
    attended = np.zeros((B, C, H * W))
    beta = np.zeros((B, H * W, L))
    for bi in range(B):
        uw = np.zeros((C, L))
        for c in range(C):
            for i in range(L):
                uw[c, i] = sum(proj[c, d] * w[bi, d, i] for d in range(D))
        vf = v[bi].reshape(C, H * W)
        for p in range(H * W):
            logits = [sum(vf[c, p] * uw[c, i] for c in range(C)) + bias[bi, i] for i in range(L)]
            beta[bi, p] = _softmax_row(logits)
            for c in range(C):
                attended[bi, c, p] = sum(beta[bi, p, i] * uw[c, i] for i in range(L))
    return attended.reshape(B, C, H, W), beta


def _oracle_correlation(w, regions, proj, scorer_w, scorer_b, bias, lengths):
    B, D, L = w.shape
    Creg, R = regions.shape[1], regions.shape[2]
    corre = np.zeros(B)
    r_all = np.zeros((B, L))
    beta_all = np.zeros((B, L, R))
    for bi in range(B):
        ntil = np.zeros((D, R))
        for d in range(D):
            for rr in range(R):
                ntil[d, rr] = sum(proj[d, c] * regions[bi, c, rr] for c in range(Creg))
        for i in range(L):
            beta_all[bi, i] = _softmax_row(
                [sum(w[bi, d, i] * ntil[d, rr] for d in range(D)) for rr in range(R)]
            )
        gamma = _softmax_row([
            sum(w[bi, d, i] * scorer_w[d, 0] for d in range(D)) + scorer_b[0] + bias[bi, i]
            for i in range(L)
        ])
        acc = 0.0
        for i in range(L):
            b_col = [sum(ntil[d, rr] * beta_all[bi, i, rr] for rr in range(R)) for d in range(D)]
            bt = [gamma[i] * x for x in b_col]
            nb = math.sqrt(sum(x * x for x in bt))
            nw = math.sqrt(sum(w[bi, d, i] ** 2 for d in range(D)))
            cos = sum(bt[d] * w[bi, d, i] for d in range(D)) / (nb * nw) if nb > 0 and nw > 0 else 0.0
            r_all[bi, i] = 1.0 / (1.0 + math.exp(-cos))
            if bias[bi, i] == 0.0:
                acc += r_all[bi, i]
        corre[bi] = acc / max(float(lengths[bi]), 1.0)
    return corre, r_all, beta_all


def test_attention_correctness(capsys):
    notes = []
    rng = np.random.default_rng(42)

    # alpha, beta, gamma: 1000 random instances per family, rows sum to one
    worst = 0.0
    for _ in range(1000):
        B = int(rng.integers(1, 4))
        L = int(rng.integers(1, 7))
        D = int(rng.integers(1, 7))
        C = int(rng.integers(1, 7))
        H, W = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        _, bias = _random_lengths(rng, B, L)
        w = Tensor(rng.standard_normal((B, D, L)))
        v = Tensor(rng.standard_normal((B, C, H, W)))
        _, alpha = channel_attention(w, bias, v, Tensor(rng.standard_normal((H * W, D))))
        _, beta = spatial_attention(w, bias, v, Tensor(rng.standard_normal((C, D))))
        disc = WordLevelDiscriminator(rng, sizes=(8,), channels=C, word_dim=D)
        gamma = disc.word_importance(w, bias)
        worst = max(
            worst,
            float(np.abs(alpha.data.sum(axis=2) - 1.0).max()),
            float(np.abs(beta.data.sum(axis=2) - 1.0).max()),
            float(np.abs(gamma.data.sum(axis=1) - 1.0).max()),
        )
    if worst > 1e-6:
        notes.append(f"attention rows sum to 1 only within {worst:.2e}")

    # brute-force oracles on 100 random small instances, dims <= 4
    worst_oracle = 0.0
    for _ in range(100):
        B = int(rng.integers(1, 5))
        L = int(rng.integers(1, 5))
        D = int(rng.integers(1, 5))
        C = int(rng.integers(1, 5))
        H, W = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        R = int(rng.integers(1, 5))
        lengths, bias = _random_lengths(rng, B, L)
        w = rng.standard_normal((B, D, L))
        v = rng.standard_normal((B, C, H, W))

        proj_c = rng.standard_normal((H * W, D))
        got_img, got_alpha = channel_attention(Tensor(w), bias, Tensor(v), Tensor(proj_c))
        want_img, want_alpha = _oracle_channel(w, bias, v, proj_c)
        worst_oracle = max(
            worst_oracle,
            float(np.abs(got_img.data - want_img).max()),
            float(np.abs(got_alpha.data - want_alpha).max()),
        )

        proj_s = rng.standard_normal((C, D))
        got_img, got_beta = spatial_attention(Tensor(w), bias, Tensor(v), Tensor(proj_s))
        want_img, want_beta = _oracle_spatial(w, bias, v, proj_s)
        worst_oracle = max(
            worst_oracle,
            float(np.abs(got_img.data - want_img).max()),
            float(np.abs(got_beta.data - want_beta).max()),
        )

        disc = WordLevelDiscriminator(rng, sizes=(8,), channels=C, word_dim=D)
        regions = rng.standard_normal((B, C, R))
        got_corre, got_r, got_rbeta = disc.correlation(Tensor(w), bias, lengths, regions=Tensor(regions))
        want_corre, want_r, want_rbeta = _oracle_correlation(
            w, regions, disc.proj.data, disc.scorer.w.data, disc.scorer.b.data, bias, lengths
        )
        worst_oracle = max(
            worst_oracle,
            float(np.abs(got_corre.data - want_corre).max()),
            float(np.abs(got_r.data - want_r).max()),
            float(np.abs(got_rbeta.data - want_rbeta).max()),
        )

        # the word term of the discriminator objective, against the same oracle
        weights = LossWeights()
        ur, cr = Tensor(rng.uniform(0.1, 0.9, B)), Tensor(rng.uniform(0.1, 0.9, B))
        uf, cf = Tensor(rng.uniform(0.1, 0.9, B)), Tensor(rng.uniform(0.1, 0.9, B))
        bd = discriminator_loss([(ur, cr)], [(uf, cf)], {0: got_corre}, {0: got_corre}, weights, ClampStats())
        hand_adv = -0.5 * (
            sum(math.log(p) for p in ur.data) / B + sum(math.log(1 - p) for p in uf.data) / B
        ) - 0.5 * (
            sum(math.log(p) for p in cr.data) / B + sum(math.log(1 - p) for p in cf.data) / B
        )
        hand_word = weights.lambda1 * (
            sum(math.log(1 - c) for c in want_corre) / B + sum(math.log(c) for c in want_corre) / B
        )
        worst_oracle = max(worst_oracle, abs(bd.total - (hand_adv + hand_word)))
    if worst_oracle > 1e-12:
        notes.append(f"oracle mismatch up to {worst_oracle:.2e}")

    _verdict(
        capsys, "attention-correctness", notes,
        f"sums within {worst:.1e} of 1 (1000 instances/family); "
        f"attention and correlation pipeline within {worst_oracle:.1e} of oracles (100 instances)",
    )


# ---------------------------------------------------------------------------
# Gradient integrity: per-op and composite finite-difference checks
# ---------------------------------------------------------------------------

REL_TOL = 1e-4


def _probed(op, rng):
    """Check target: a fixed random projection of the op output."""
    probe = {}

    def f(t):
        y = op(t)
        if "data" not in probe:
            probe["data"] = rng.standard_normal(y.data.shape)
        return tsum(mul(y, Tensor(probe["data"])))

    return f


def _op_cases(rng):
    """(name, f, x) triples covering every differentiable operation."""
    x34 = rng.standard_normal((3, 4))
    pos = np.abs(rng.standard_normal((3, 4))) + 0.2
    away = rng.standard_normal((3, 4))
    away += np.sign(away) * 0.05  # stay clear of the leaky_relu kink
    clamped = rng.uniform(-0.4, 0.4, (3, 4))  # strictly inside the clamp window
    other = rng.standard_normal((3, 4)) * 0.5
    denom = np.sign(rng.standard_normal((3, 4))) * (np.abs(rng.standard_normal((3, 4))) + 0.5)
    m_a, m_b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    cols_a = rng.standard_normal((2, 3, 4)) + 0.1
    cols_b = rng.standard_normal((2, 3, 4)) + 0.1
    vec_a, vec_b = rng.standard_normal(5) + 0.1, rng.standard_normal(5) + 0.1
    conv_x = rng.standard_normal((2, 3, 5, 5))
    conv_w = rng.standard_normal((4, 3, 3, 3)) * 0.4
    conv_b = rng.standard_normal(4)
    norm_x = rng.standard_normal((2, 4, 3, 3))
    gamma, beta = rng.standard_normal(4) + 1.0, rng.standard_normal(4)
    emb_w = rng.standard_normal((7, 3))
    idx = rng.integers(0, 7, size=(2, 4))
    vexp = rng.standard_normal((2, 3))

    return [
        ("add", _probed(lambda t: add(t, Tensor(other)), rng), x34),
        ("mul", _probed(lambda t: mul(t, Tensor(other)), rng), x34),
        ("div", _probed(lambda t: div(t, Tensor(denom)), rng), x34),
        ("power", _probed(lambda t: power(t, 3.0), rng), x34),
        ("exp", _probed(exp, rng), x34 * 0.5),
        ("log", _probed(log, rng), pos),
        ("sqrt", _probed(sqrt, rng), pos),
        ("sigmoid", _probed(sigmoid, rng), x34),
        ("tanh", _probed(tanh, rng), x34),
        ("leaky_relu", _probed(leaky_relu, rng), away),
        ("clamp", _probed(lambda t: clamp(t, -0.5, 0.5), rng), clamped),
        ("reshape", _probed(lambda t: reshape(t, (4, 3)), rng), x34),
        ("transpose", _probed(lambda t: transpose(t, (1, 0)), rng), x34),
        ("getitem", _probed(lambda t: getitem(t, (slice(1, 3), slice(None, None, 2))), rng), x34),
        ("concat", _probed(lambda t: concat([t, Tensor(other)], axis=1), rng), x34),
        ("tsum", _probed(lambda t: tsum(t, axis=1), rng), x34),
        ("tmean", _probed(lambda t: tmean(t, axis=0, keepdims=True), rng), x34),
        ("matmul_lhs", _probed(lambda t: matmul(t, Tensor(m_b)), rng), m_a),
        ("matmul_rhs", _probed(lambda t: matmul(Tensor(m_a), t), rng), m_b),
        ("softmax_rows", _probed(softmax_rows, rng), x34),
        ("log_softmax_rows", _probed(log_softmax_rows, rng), x34),
        ("column_cosine", _probed(lambda t: column_cosine(t, Tensor(cols_b), CosineFlags()), rng), cols_a),
        ("cosine_similarity", _probed(lambda t: cosine_similarity(t, Tensor(vec_b), CosineFlags()), rng), vec_a),
        ("conv2d_x", _probed(lambda t: conv2d(t, Tensor(conv_w), Tensor(conv_b)), rng), conv_x),
        ("conv2d_w", _probed(lambda t: conv2d(Tensor(conv_x), t, Tensor(conv_b)), rng), conv_w),
        ("conv2d_b", _probed(lambda t: conv2d(Tensor(conv_x), Tensor(conv_w), t), rng), conv_b),
        ("conv2d_zero_s2", _probed(lambda t: conv2d(t, Tensor(conv_w), None, stride=2, padding="zero"), rng), conv_x),
        ("upsample2x", _probed(upsample2x, rng), norm_x),
        ("channel_norm_x", _probed(lambda t: channel_norm(t, Tensor(gamma), Tensor(beta)), rng), norm_x),
        ("channel_norm_gamma", _probed(lambda t: channel_norm(Tensor(norm_x), t, Tensor(beta)), rng), gamma),
        ("embedding", _probed(lambda t: embedding(t, idx), rng), emb_w),
        ("expand_spatial", _probed(lambda t: expand_spatial(t, 3, 2), rng), vexp),
    ]


def _composite_loss_fns(state, batch, z, eps, perm):
    """The full training objectives as deterministic checkable scalars.

    The discriminator objective sees generated images, word features and
    the sentence vector as constants (they are detached in training), so
    those are precomputed once; the generator objective rebuilds its whole
    graph on every call because its leaves sit upstream.
    """
    model, cfg, weights = state.model, state.cfg, state.weights

    with no_grad():
        w0, s0 = model.text.encode(batch.ids, batch.lengths)
        s_tilde0, _ = model.ca.augment(s0, eps)
        fakes = [img.data.copy() for img in model.gen(s_tilde0, Tensor(z), w0, batch.bias).images]
    w_data, s_data = w0.data.copy(), s0.data.copy()

    def d_loss(_):
        s_const = Tensor(s_data)
        real_probs, fake_probs = [], []
        for disc, real, fake in zip(model.discs, batch.images, fakes):
            real_probs.append(disc(Tensor(real), s_const))
            fake_probs.append(disc(Tensor(fake), s_const))
        corre_m, corre_mm = {}, {}
        w_d = Tensor(w_data)
        w_mm = Tensor(w_data[perm])
        for k, size in enumerate(cfg.stage_sizes):
            if size not in cfg.word_disc_sizes:
                continue
            regions = model.word_disc.encode_regions(Tensor(batch.images[k]))
            corre_m[k], _, _ = model.word_disc.correlation(w_d, batch.bias, batch.lengths, regions=regions)
            corre_mm[k], _, _ = model.word_disc.correlation(w_mm, batch.bias[perm], batch.lengths[perm], regions=regions)
        return discriminator_loss(real_probs, fake_probs, corre_m, corre_mm, weights, ClampStats()).tensor

    def g_loss(_):
        w, s = model.text.encode(batch.ids, batch.lengths)
        s_tilde, kl = model.ca.augment(s, eps)
        gen_out = model.gen(s_tilde, Tensor(z), w, batch.bias)
        fake_probs = [disc(img, s) for disc, img in zip(model.discs, gen_out.images)]
        corre_fake = {}
        for k, size in enumerate(cfg.stage_sizes):
            if size not in cfg.word_disc_sizes:
                continue
            corre_fake[k], _, _ = model.word_disc.correlation(w, batch.bias, batch.lengths, img=gen_out.images[k])
        perceptual = [
            perceptual_loss(img, Tensor(real), model.perceptual)
            for img, real in zip(gen_out.images, batch.images)
        ]
        matching = model.matcher.loss(gen_out.images[-1], s)
        return generator_loss(fake_probs, corre_fake, perceptual, matching, kl, weights, ClampStats()).tensor

    return d_loss, g_loss


_D_LEAVES = (
    "discs.1.u_conv.b",
    "discs.0.c_out.b",
    "discs.1.c_out.b",
    "word_disc.scorer.w",
    "word_disc.encoders.0.final.b",
)
_G_LEAVES = (
    "text.fw_x.b",
    "text.s_proj.b",
    "ca.mu.b",
    "ca.logvar.b",
    "gen.to_img.1.b",
    "gen.stages.0.join.b",
    "matcher.txt_proj.b",
)


def _window_straddles_kink(loss_fn, leaf, eps=1e-5):
    """True when any probe window of the sweep crosses a piecewise boundary."""
    flat = leaf.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            sides = []
            for delta in (eps, -eps):
                flat[i] = orig + delta
                with trace_kinks() as trace:
                    loss_fn(leaf)
                sides.append(b"".join(trace))
            flat[i] = orig
            if sides[0] != sides[1]:
                return True
    return False


def _composite_seed_check(seed):
    """Sweep both composite objectives for one seed.

    A central difference across a +/-eps window measures the analytic
    gradient plus window artifacts: truncation (shrinks as eps^2) and
    leaky_relu kinks inside the window (vanish once eps clears them). A
    genuine backprop mismatch is eps-independent, so a leaf over
    tolerance at the required eps is re-measured at eps 1e-6: still over
    tolerance there, with no kink straddling even that window per
    trace_kinks, means a real gradient bug and fails outright. A leaf
    that recovers at eps 1e-6 while trace_kinks places a piecewise
    boundary inside the 1e-5 window is a verified probe artifact and
    passes. A kink so close that even the 1e-6 window is contaminated
    decides nothing, so the stochastic inputs (batch scenes, z,
    augmentation noise) are redrawn and that leaf is swept again.
    """
    cfg = small_config(seed=seed, batch_size=2)
    state = init_state(cfg)
    leaves = dict(state.model.named_tensors())
    rng = np.random.default_rng(7000 + seed)
    undecided = ""
    for attempt in range(6):
        batch = fetch_batch(cfg, state.model, attempt)
        z = rng.standard_normal((2, cfg.noise_dim))
        eps_ca = rng.standard_normal((2, cfg.ca_dim))
        d_loss, g_loss = _composite_loss_fns(state, batch, z, eps_ca, np.array([1, 0]))
        worst, worst_name, excused, open_leaves, bugs = 0.0, "", 0, [], []
        for loss_fn, leaf_names, label in ((d_loss, _D_LEAVES, "d_obj"), (g_loss, _G_LEAVES, "g_obj")):
            for leaf_name in leaf_names:
                leaf, name = leaves[leaf_name], f"{label}:{leaf_name}"
                err = finite_diff_grad_check(loss_fn, leaf)
                if err <= REL_TOL:
                    if err > worst:
                        worst, worst_name = err, name
                    continue
                fine = finite_diff_grad_check(loss_fn, leaf, eps=1e-6)
                if fine > REL_TOL and not _window_straddles_kink(loss_fn, leaf, eps=1e-6):
                    bugs.append(f"{name} rel err {err:.2e} persists at eps 1e-6 ({fine:.2e}), no kink in window")
                elif fine <= REL_TOL and _window_straddles_kink(loss_fn, leaf):
                    excused += 1
                else:
                    open_leaves.append(name)
        if bugs:
            return worst, worst_name, attempt, excused, bugs
        if not open_leaves:
            return worst, worst_name, attempt, excused, []
        undecided = ", ".join(open_leaves)
    return 0.0, "", 6, 0, [f"seed {seed}: kink-contaminated probes persist after 6 draws ({undecided})"]


def test_gradient_integrity(capsys):
    start = time.monotonic()
    notes = []

    worst_op, worst_op_name = 0.0, ""
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        for name, f, x in _op_cases(rng):
            err = finite_diff_grad_check(f, Tensor(np.asarray(x, dtype=np.float64), requires_grad=True))
            if err > worst_op:
                worst_op, worst_op_name = err, name
    if worst_op > REL_TOL:
        notes.append(f"op gradient error {worst_op:.2e} ({worst_op_name})")

    worst_comp, worst_comp_name, redraws, excused = 0.0, "", 0, 0
    for seed in range(10):
        err, name, attempt, seed_excused, seed_notes = _composite_seed_check(seed)
        redraws += attempt
        excused += seed_excused
        notes.extend(seed_notes)
        if seed_notes:
            break
        if err > worst_comp:
            worst_comp, worst_comp_name = err, name

    elapsed = time.monotonic() - start
    if elapsed >= 120.0:
        notes.append(f"took {elapsed:.0f}s (budget 120s)")

    _verdict(
        capsys, "gradient-integrity", notes,
        f"ops max rel err {worst_op:.2e} ({worst_op_name}); "
        f"composite objectives max {worst_comp:.2e} ({worst_comp_name}); "
        f"10 seeds each, {redraws} redraws, {excused} kink-excused probes, in {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# Determinism: identical runs byte-identical; resume equivalence at step 20
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_determinism(tmp_path, capsys):
    notes = []

    _trained("full", capsys)
    _trained("full_rerun", capsys)
    for fname in ("latest.bin", "ckpt_010000.bin"):
        a = Path(run_dir("full"), fname).read_bytes()
        b = Path(run_dir("full_rerun"), fname).read_bytes()
        if a != b:
            notes.append(f"{fname} differs between identical runs")

    cfg = TrainConfig(total_steps=40, checkpoint_every=20)
    dir_a = tmp_path / "straight"
    train(init_state(cfg), str(dir_a))
    resumed = load_state(str(dir_a / "ckpt_000020.bin"))
    if resumed.step != 20:
        notes.append(f"checkpoint at step 20 reloaded at step {resumed.step}")
    dir_b = tmp_path / "resumed"
    train(resumed, str(dir_b))
    if (dir_a / "ckpt_000040.bin").read_bytes() != (dir_b / "ckpt_000040.bin").read_bytes():
        notes.append("resume from step 20 diverges from the uninterrupted run")

    _verdict(capsys, "determinism", notes,
             "identical full runs byte-equal (latest + step-10000 checkpoints); resume at step 20 byte-equal")


# ---------------------------------------------------------------------------
# Discrimination emerges under d_only training
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_discrimination_emerges(capsys):
    state, meta = _trained("d_only_2000", capsys)
    gap = correlation_gap(state, 500)
    minutes = meta["minutes"]
    notes = []
    if not gap > 0.2:
        notes.append(f"correlation gap {gap:.3f} not above 0.2")
    if not minutes < 10.0:
        notes.append(f"took {minutes:.1f} min (budget 10)")
    _verdict(
        capsys, "discrimination-emerges", notes,
        f"matched-vs-mismatched correlation gap {gap:.3f} > 0.2 over 500 eval scenes; "
        f"2000 discriminator-only steps in {minutes:.1f} min",
    )


# ---------------------------------------------------------------------------
# Controllability: full model beats ablations directionally
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_controllability(capsys):
    states, metas = {}, {}
    for tag in ("full", "no_perceptual", "text_adaptive_pooling", "no_word_disc"):
        states[tag], metas[tag] = _trained(tag, capsys)

    # same eval seeds and scenes for every model: a paired comparison
    results = {tag: evaluate_manipulation(s.model, 200) for tag, s in states.items()}
    full = results["full"]

    notes = []
    if not full["l2_outside_mask"] < results["no_perceptual"]["l2_outside_mask"]:
        notes.append("full not strictly below no_perceptual on l2_outside_mask")
    if not full["l2_outside_mask"] < results["text_adaptive_pooling"]["l2_outside_mask"]:
        notes.append("full not strictly below text_adaptive_pooling on l2_outside_mask")
    if not full["attr_flip_rate"] > results["no_word_disc"]["attr_flip_rate"]:
        notes.append("full attr_flip_rate not above no_word_disc")
    over = [f"{tag}={m['minutes']:.1f}" for tag, m in metas.items() if m["minutes"] >= 30.0]
    if over:
        notes.append(f"runs over 30 min: {', '.join(over)}")

    detail = (
        f"l2_outside_mask full={full['l2_outside_mask']:.4f} "
        f"no_perceptual={results['no_perceptual']['l2_outside_mask']:.4f} "
        f"text_adaptive_pooling={results['text_adaptive_pooling']['l2_outside_mask']:.4f}; "
        f"attr_flip_rate full={full['attr_flip_rate']:.3f} "
        f"no_word_disc={results['no_word_disc']['attr_flip_rate']:.3f}; "
        f"200 paired edit pairs; minutes "
        + " ".join(f"{t}={m['minutes']:.1f}" for t, m in metas.items())
    )
    _verdict(capsys, "controllability", notes, detail)
