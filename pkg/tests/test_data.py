"""Scene sampling, masks, captions, and edit mechanics."""
import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capgan.data import (
    COLOR_ANCHORS,
    COLOR_WORDS,
    EVAL_SEED_RANGE,
    NOISE_BOUND,
    PALETTE,
    PARTS,
    SIZE,
    SYNONYMS,
    TRAIN_SEED_RANGE,
    EditSpec,
    apply_edit,
    build_vocabulary,
    dump_dataset,
    random_edit,
    scene_at,
)
from capgan.imgio import parse_pgm, parse_ppm
from capgan.text import UNK_INDEX

ALL_PARTS = PARTS + ["background"]


def test_scene_deterministic_per_seed_and_index():
    a = scene_at(0, 5)
    b = scene_at(0, 5)
    assert (a.image == b.image).all()
    assert a.caption == b.caption
    assert a.part_colors == b.part_colors
    for part in ALL_PARTS:
        assert (a.masks[part] == b.masks[part]).all()
    c = scene_at(1, 5)
    assert a.caption != c.caption or (a.image != c.image).any()


def test_scene_streaming_is_stateless():
    first = scene_at(3, 7)
    for i in range(4):  # interleave other indices; index 7 must not care
        scene_at(3, i)
    again = scene_at(3, 7)
    assert (first.image == again.image).all() and first.caption == again.caption


def test_masks_partition_canvas():
    for idx in range(5):
        scene = scene_at(0, idx)
        total = sum(int(scene.masks[p].sum()) for p in ALL_PARTS)
        assert total == SIZE * SIZE
        union = np.zeros((SIZE, SIZE), dtype=bool)
        for p in ALL_PARTS:
            assert not (union & scene.masks[p]).any()
            union |= scene.masks[p]
        assert union.all()


def test_seed0_head_color_matches_palette():
    scene = scene_at(0, 0)
    anchor = COLOR_ANCHORS[scene.part_colors["head"]]
    mean = scene.image[:, scene.masks["head"]].mean(axis=1)
    assert np.abs(mean - anchor).max() < 0.05


def test_every_part_pixel_within_noise_bound():
    for idx in range(3):
        scene = scene_at(2, idx)
        for part in ALL_PARTS:
            anchor = COLOR_ANCHORS[scene.part_colors[part]][:, None]
            pixels = scene.image[:, scene.masks[part]]
            assert np.abs(pixels - anchor).max() <= 0.05


def test_caption_mentions_each_color_exactly_once():
    for idx in range(20):
        scene = scene_at(4, idx)
        assert scene.caption[:4] == ["the", "bird", "has", "a"]
        for part in PARTS:
            color_word = COLOR_WORDS[scene.part_colors[part]]
            assert scene.caption.count(color_word) == 1
        # the background color never appears in text
        assert COLOR_WORDS[scene.part_colors["background"]] not in scene.caption
        colors = [scene.part_colors[p] for p in ALL_PARTS]
        assert len(set(colors)) == 4


def test_vocabulary_closed_over_generated_captions():
    vocab = build_vocabulary()
    for seed_range in (TRAIN_SEED_RANGE, EVAL_SEED_RANGE):
        for idx in range(25):
            scene = scene_at(0, seed_range.start + idx)
            ids = vocab.encode(scene.caption, strict=True)
            assert UNK_INDEX not in ids


def test_seed_ranges_are_disjoint():
    assert TRAIN_SEED_RANGE.stop == EVAL_SEED_RANGE.start == 10000
    assert TRAIN_SEED_RANGE.start == 0 and EVAL_SEED_RANGE.stop == 11000


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=25, deadline=None)
def test_scene_contract_random_indices(index):
    scene = scene_at(0, index)
    total = sum(int(scene.masks[p].sum()) for p in ALL_PARTS)
    assert total == SIZE * SIZE
    nouns = [t for t in scene.caption if t in PARTS or t in SYNONYMS.values()]
    assert len(nouns) == 3
    assert scene.image.min() >= -1.0 and scene.image.max() <= 1.0


# -- edits ------------------------------------------------------------------------


def test_apply_edit_changes_exactly_one_token():
    scene = scene_at(0, 1)
    new_color = (scene.part_colors["head"] + 3) % len(PALETTE)
    tokens, mask = apply_edit(scene, EditSpec("head", new_color))
    diffs = [i for i, (a, b) in enumerate(zip(scene.caption, tokens)) if a != b]
    assert len(diffs) == 1
    assert tokens[diffs[0]] == COLOR_WORDS[new_color]
    assert (mask == scene.masks["head"]).all()
    assert mask is not scene.masks["head"]


def test_apply_edit_round_trip_restores_caption():
    scene = scene_at(0, 2)
    old = scene.part_colors["belly"]
    new = (old + 1) % len(PALETTE)
    tokens, _ = apply_edit(scene, EditSpec("belly", new))
    edited = dataclasses.replace(
        scene, caption=tokens, part_colors={**scene.part_colors, "belly": new}
    )
    back, _ = apply_edit(edited, EditSpec("belly", old))
    assert back == scene.caption


def test_apply_edit_rejects_bad_specs():
    scene = scene_at(0, 3)
    with pytest.raises(ValueError):
        apply_edit(scene, EditSpec("head", scene.part_colors["head"]))
    with pytest.raises(ValueError):
        apply_edit(scene, EditSpec("tail", 0))
    with pytest.raises(ValueError):
        apply_edit(scene, EditSpec("head", 9))
    broken = dataclasses.replace(
        scene, caption=[t if t not in ("head", SYNONYMS["head"]) else "and" for t in scene.caption]
    )
    with pytest.raises(ValueError):
        apply_edit(broken, EditSpec("head", (scene.part_colors["head"] + 1) % len(PALETTE)))


def test_random_edit_always_valid():
    rng = np.random.default_rng(0)
    scene = scene_at(0, 4)
    for _ in range(30):
        edit = random_edit(scene, rng)
        assert edit.part in PARTS
        assert 0 <= edit.new_color < len(PALETTE)
        assert edit.new_color != scene.part_colors[edit.part]


# -- dataset dump -------------------------------------------------------------------


def test_dump_dataset_layout_and_content(tmp_path):
    dump_dataset(str(tmp_path), 2, global_seed=0)
    for idx in range(2):
        scene = scene_at(0, idx)
        scene_dir = tmp_path / f"scene_{idx:05d}"
        img = parse_ppm((scene_dir / "image.ppm").read_bytes())
        assert img.shape == (3, SIZE, SIZE)
        assert np.abs(img - scene.image).max() <= 0.5 / 127.5 + 1e-12
        caption = (scene_dir / "caption.txt").read_text().split()
        assert caption == scene.caption
        for part in ALL_PARTS:
            mask = parse_pgm((scene_dir / f"mask_{part}.pgm").read_bytes())
            assert ((mask == 1.0) == scene.masks[part]).all()


def test_noise_bound_stays_under_contract():
    assert NOISE_BOUND < 0.05
