"""Procedural parts-and-colors dataset with exact ground-truth masks.

Each scene is a stylized bird on a colored background: an ellipse head,
an ellipse belly, and two triangle wings, each painted a palette color
and described by a templated caption. Masks partition the 32x32 canvas
with priority head > belly > wings > background, so color-edit locality
is measurable pixel-exactly.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .imgio import pgm_bytes, ppm_bytes
from .seeding import SALT_SCENE, stream_rng
from .text import PAD_TOKEN, UNK_TOKEN, Vocabulary

SIZE = 32
NOISE_BOUND = 0.04  # dithering amplitude, strictly under the 0.05 contract

PALETTE: list[tuple[str, tuple[float, float, float]]] = [
    ("red", (1.0, -1.0, -1.0)),
    ("green", (-1.0, 1.0, -1.0)),
    ("blue", (-1.0, -1.0, 1.0)),
    ("yellow", (1.0, 1.0, -1.0)),
    ("magenta", (1.0, -1.0, 1.0)),
    ("cyan", (-1.0, 1.0, 1.0)),
    ("white", (1.0, 1.0, 1.0)),
    ("black", (-1.0, -1.0, -1.0)),
]
COLOR_WORDS = [name for name, _ in PALETTE]
COLOR_ANCHORS = np.array([rgb for _, rgb in PALETTE])

PARTS = ["head", "belly", "wings"]  # caption order; background is implicit
SYNONYMS = {"head": "crown", "belly": "breast", "wings": "feathers"}
SYNONYM_RATE = 0.2
_NOUN_TO_PART = {**{p: p for p in PARTS}, **{syn: part for part, syn in SYNONYMS.items()}}

TRAIN_SEED_RANGE = range(0, 10000)
EVAL_SEED_RANGE = range(10000, 11000)


def build_vocabulary() -> Vocabulary:
    tokens = [PAD_TOKEN, UNK_TOKEN, "the", "bird", "has", "a", "and"]
    tokens += PARTS + [SYNONYMS[p] for p in PARTS] + COLOR_WORDS
    return Vocabulary(tokens)


@dataclass
class Scene:
    part_colors: dict[str, int]  # includes "background"
    masks: dict[str, np.ndarray]  # bool (32, 32), includes "background"
    image: np.ndarray  # (3, 32, 32) in [-1, 1]
    caption: list[str]


@dataclass
class EditSpec:
    part: str
    new_color: int


def _ellipse_mask(yy, xx, cy, cx, ry, rx) -> np.ndarray:
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _triangle_mask(yy, xx, pts) -> np.ndarray:
    """Pixels whose centers fall inside the triangle (sign-consistent cross products)."""

    def cross(p, q):
        return (q[1] - p[1]) * (yy - p[0]) - (q[0] - p[0]) * (xx - p[1])

    a, b, c = pts
    d1, d2, d3 = cross(a, b), cross(b, c), cross(c, a)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def sample_scene(rng: np.random.Generator) -> Scene:
    """Deterministic scene from the generator's current state.

    The four colors are drawn without replacement so every part is
    visually distinct from its neighbors and the background.
    """
    colors = rng.choice(len(PALETTE), size=4, replace=False)
    part_colors = {"head": int(colors[0]), "belly": int(colors[1]), "wings": int(colors[2]), "background": int(colors[3])}
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    for _ in range(32):  # rejected only when jitter degenerates a part
        jit = rng.uniform(-1.5, 1.5, size=4)
        scale = rng.uniform(0.85, 1.15, size=2)
        wing_jit = rng.uniform(-1.0, 1.0, size=(2, 3, 2))
        head = _ellipse_mask(yy, xx, 9.0 + jit[0], 16.0 + jit[1], 4.0 * scale[0], 4.5 * scale[0])
        belly = _ellipse_mask(yy, xx, 20.0 + jit[2], 16.0 + jit[3], 5.5 * scale[1], 6.5 * scale[1])
        left_pts = np.array([[13.0, 4.0], [16.0, 11.0], [24.0, 9.0]]) + wing_jit[0]
        right_base = np.array([[13.0, 27.0], [16.0, 20.0], [24.0, 22.0]])
        right_pts = right_base + wing_jit[1]
        wings = _triangle_mask(yy, xx, left_pts) | _triangle_mask(yy, xx, right_pts)
        belly = belly & ~head
        wings = wings & ~head & ~belly
        if head.sum() >= 8 and belly.sum() >= 8 and wings.sum() >= 8:
            break
    else:
        raise RuntimeError("scene geometry failed to produce visible parts")
    background = ~(head | belly | wings)
    masks = {"head": head, "belly": belly, "wings": wings, "background": background}

    image = np.empty((3, SIZE, SIZE))
    for part, mask in masks.items():
        image[:, mask] = COLOR_ANCHORS[part_colors[part]][:, None]
    image += rng.uniform(-NOISE_BOUND, NOISE_BOUND, size=image.shape)
    np.clip(image, -1.0, 1.0, out=image)

    caption = ["the", "bird", "has", "a"]
    for i, part in enumerate(PARTS):
        noun = SYNONYMS[part] if rng.uniform() < SYNONYM_RATE else part
        caption += [COLOR_WORDS[part_colors[part]], noun]
        if i < len(PARTS) - 1:
            caption.append("and")
    return Scene(part_colors, masks, image, caption)


def scene_at(global_seed: int, index: int) -> Scene:
    """Scene ``index`` as a pure function of (global seed, index)."""
    return sample_scene(stream_rng(global_seed, SALT_SCENE, index))


def apply_edit(scene: Scene, edit: EditSpec) -> tuple[list[str], np.ndarray]:
    """Replace one part's color word; returns (new tokens, part mask)."""
    if edit.part not in PARTS:
        raise ValueError(f"unknown part {edit.part!r}")
    if edit.new_color == scene.part_colors[edit.part]:
        raise ValueError("edit must change the color")
    if not 0 <= edit.new_color < len(PALETTE):
        raise ValueError(f"color index {edit.new_color} out of palette range")
    position = None
    for i, token in enumerate(scene.caption):
        if _NOUN_TO_PART.get(token) == edit.part:
            position = i
            break
    if position is None or position == 0:
        raise ValueError(f"part {edit.part!r} absent from caption")
    tokens = list(scene.caption)
    tokens[position - 1] = COLOR_WORDS[edit.new_color]
    return tokens, scene.masks[edit.part].copy()


def random_edit(scene: Scene, rng: np.random.Generator) -> EditSpec:
    part = PARTS[int(rng.integers(len(PARTS)))]
    current = scene.part_colors[part]
    offset = int(rng.integers(1, len(PALETTE)))
    return EditSpec(part, (current + offset) % len(PALETTE))


def dump_dataset(out_dir: str, count: int, global_seed: int = 0) -> None:
    """One directory per scene: image.ppm, caption.txt, mask_<part>.pgm."""
    os.makedirs(out_dir, exist_ok=True)
    for i in range(count):
        scene = scene_at(global_seed, i)
        scene_dir = os.path.join(out_dir, f"scene_{i:05d}")
        os.makedirs(scene_dir, exist_ok=True)
        with open(os.path.join(scene_dir, "image.ppm"), "wb") as fh:
            fh.write(ppm_bytes(scene.image))
        with open(os.path.join(scene_dir, "caption.txt"), "w", encoding="utf-8") as fh:
            fh.write(" ".join(scene.caption) + "\n")
        for part, mask in scene.masks.items():
            with open(os.path.join(scene_dir, f"mask_{part}.pgm"), "wb") as fh:
                fh.write(pgm_bytes(mask))
