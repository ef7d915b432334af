"""Render a caption, swap one color word, render again with the same z.

The pair of images plus a difference map is the whole controllability
story: the latent never changes, so anything that moves in the image
was moved by the words. Uses a trained checkpoint when you have one
(e.g. runs/acceptance/full/latest.bin after the test suite has warmed
its cache); falls back to fresh weights, where the difference map is
expectedly not localized.

Run: python3 demos/manipulate_pair.py [checkpoint.bin]
"""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from capgan.config import ConfigError, TrainConfig
from capgan.imgio import pgm_bytes, ppm_bytes
from capgan.training import init_state, l2_metrics, load_state, pixel_sq_distance
from capgan.data import scene_at, random_edit, apply_edit
from capgan.seeding import stream_rng

OUT = os.path.join(os.path.dirname(__file__), "out", "manipulate")
DEFAULT_CKPT = os.path.join(os.path.dirname(__file__), "..", "runs", "acceptance", "full", "latest.bin")


def main():
    os.makedirs(OUT, exist_ok=True)
    path = sys.argv[1] if len(sys.argv) > 1 else DEFAULT_CKPT
    state = None
    if os.path.isfile(path):
        try:
            state = load_state(path)
            print(f"checkpoint {path} (step {state.step})")
        except ConfigError as exc:
            print(f"cannot load {path} ({exc}), falling back to fresh weights")
    if state is None:
        if not os.path.isfile(path):
            print("no trained checkpoint found, using fresh weights")
        state = init_state(TrainConfig())
    model = state.model

    scene = scene_at(model.cfg.seed, 10000)  # an eval-range scene, never trained on
    edit = random_edit(scene, stream_rng(1, 7, 0))
    edited_tokens, mask = apply_edit(scene, edit)
    print("original:", " ".join(scene.caption))
    print("edited:  ", " ".join(edited_tokens))

    z = stream_rng(1, 8, 0).standard_normal((1, model.cfg.noise_dim))
    base = model.render([scene.caption], z).final[0]
    changed = model.render([edited_tokens], z).final[0]

    m = l2_metrics(base, changed, mask)
    for key, value in m.items():
        print(f"  {key} = {value:.6f}")
    inside = mask.mean()
    print(f"  (edited part covers {inside:.1%} of the image; a localized edit"
          f" concentrates its change there)")

    diff = pixel_sq_distance(base, changed)
    span = diff.max()
    for name, img in (("original", base), ("edited", changed)):
        with open(os.path.join(OUT, f"{name}.ppm"), "wb") as fh:
            fh.write(ppm_bytes(img))
    with open(os.path.join(OUT, "difference.pgm"), "wb") as fh:
        fh.write(pgm_bytes(diff / span if span > 0 else diff))
    print(f"wrote {OUT}/original.ppm, edited.ppm, difference.pgm")


if __name__ == "__main__":
    main()
