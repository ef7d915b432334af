"""Train a small model for a couple hundred steps and watch the losses.

Uses a reduced config (2 stages, 16x16 output) so a desk CPU gets
through it in about a minute. Also demonstrates the determinism
contract: resuming from the step-100 checkpoint reproduces the final
checkpoint byte for byte.

Run: python3 demos/train_small.py
"""
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from capgan.checkpoint import checkpoint_bytes
from capgan.config import TrainConfig
from capgan.training import init_state, load_state, state_payload, train

OUT = os.path.join(os.path.dirname(__file__), "out", "train_small")


def log(step, d_bd, g_bd):
    if step % 50 == 0:
        print(f"  step {step:4d}  d {d_bd.total:7.3f}  g {g_bd.total:7.3f}")


def main():
    os.makedirs(OUT, exist_ok=True)
    cfg = TrainConfig(
        k_stages=2,
        stage_sizes=(8, 16),
        total_steps=200,
        checkpoint_every=100,
        batch_size=8,
        train_scenes=500,
        seed=5,
    )
    print("training 200 steps at 16x16, batch 8")
    state = train(init_state(cfg), OUT, log_fn=log)

    resumed = load_state(os.path.join(OUT, "ckpt_000100.bin"))
    print(f"resumed from step {resumed.step}, retraining to {cfg.total_steps}")
    resumed = train(resumed, None)

    b1 = checkpoint_bytes(state_payload(state))
    b2 = checkpoint_bytes(state_payload(resumed))
    print("straight-through vs resumed checkpoints byte-equal:", b1 == b2)


if __name__ == "__main__":
    main()
