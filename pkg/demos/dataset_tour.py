"""Walk through the synthetic dataset: scenes, masks, captions, edits.

Writes a handful of scene renders and their part masks under
demos/out/dataset, then prints the caption grammar and shows how an
edit pair is constructed (same scene, one color word swapped).

Run: python3 demos/dataset_tour.py
"""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from capgan.data import (
    COLOR_WORDS,
    PARTS,
    apply_edit,
    random_edit,
    scene_at,
)
from capgan.imgio import pgm_bytes, ppm_bytes
from capgan.seeding import stream_rng

OUT = os.path.join(os.path.dirname(__file__), "out", "dataset")


def main():
    os.makedirs(OUT, exist_ok=True)
    print("palette:", ", ".join(COLOR_WORDS))
    print("parts with a caption slot:", ", ".join(PARTS))
    print()

    for idx in range(4):
        scene = scene_at(0, idx)
        print(f"scene {idx}: {' '.join(scene.caption)}")
        with open(os.path.join(OUT, f"scene_{idx}.ppm"), "wb") as fh:
            fh.write(ppm_bytes(scene.image))
        for part in PARTS:
            mask = scene.masks[part].astype(np.float64)
            with open(os.path.join(OUT, f"scene_{idx}_{part}.pgm"), "wb") as fh:
                fh.write(pgm_bytes(mask))

    # an edit pair: the ground truth for "did the change stay in its region"
    scene = scene_at(0, 5)
    edit = random_edit(scene, stream_rng(0, 99, 5))
    edited_tokens, mask = apply_edit(scene, edit)
    print()
    print("original:", " ".join(scene.caption))
    print("edited:  ", " ".join(edited_tokens))
    print(f"edit targets '{edit.part}', new color '{COLOR_WORDS[edit.new_color]}',"
          f" mask covers {mask.mean():.1%} of pixels")
    print()
    print(f"wrote renders and masks to {OUT}")


if __name__ == "__main__":
    main()
