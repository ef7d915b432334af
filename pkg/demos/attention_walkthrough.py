"""Show what the attention maps mean, end to end, on a tiny model.

Channel attention assigns each feature channel a distribution over
caption words; spatial attention assigns each pixel one. Both are
probability rows, so they sum to 1, and the per-channel argmax is a
readable report of "which word drives this channel". No training is
needed to demonstrate the mechanics, so this runs on fresh weights
unless you point it at a checkpoint.

Run: python3 demos/attention_walkthrough.py [checkpoint.bin]
"""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from capgan.config import TrainConfig
from capgan.imgio import pgm_bytes
from capgan.training import init_state, load_state

OUT = os.path.join(os.path.dirname(__file__), "out", "attention")

CAPTION = "the bird has a red head and blue belly and green wings".split()


def main():
    os.makedirs(OUT, exist_ok=True)
    if len(sys.argv) > 1:
        state = load_state(sys.argv[1])
        print(f"loaded checkpoint {sys.argv[1]} at step {state.step}")
    else:
        state = init_state(TrainConfig(seed=3))
        print("no checkpoint given, using fresh weights (maps are random but valid)")
    model = state.model

    z = np.random.default_rng(11).standard_normal((1, model.cfg.noise_dim))
    result = model.render([CAPTION], z)

    n_real = int(result.lengths[0])
    for stage, alpha in sorted(result.alphas.items()):
        a = alpha[0]  # (C, L)
        print(f"\nstage {stage}: alpha is {a.shape[0]} channels x {a.shape[1]} word slots")
        print(f"  row sums: min {a.sum(axis=1).min():.9f} max {a.sum(axis=1).max():.9f}")
        # which word each of the first few channels listens to
        for c in range(4):
            i = int(a[c, :n_real].argmax())
            print(f"  channel {c:2d} -> '{CAPTION[i]}' (weight {a[c, i]:.3f})")

    for stage, beta in sorted(result.betas.items()):
        b = beta[0]  # (H*W, L)
        side = int(np.sqrt(b.shape[0]))
        print(f"\nstage {stage}: beta maps {side}x{side} pixels to words,"
              f" row sums within {abs(b.sum(axis=1) - 1).max():.2e} of 1")
        for i, word in enumerate(CAPTION):
            m = b[:, i].reshape(side, side)
            span = m.max() - m.min()
            norm = (m - m.min()) / span if span > 0 else np.zeros_like(m)
            path = os.path.join(OUT, f"stage{stage}_{i:02d}_{word}.pgm")
            with open(path, "wb") as fh:
                fh.write(pgm_bytes(norm))
    print(f"\nwrote per-word heatmaps to {OUT}")


if __name__ == "__main__":
    main()
