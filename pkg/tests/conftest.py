import os

# single-threaded BLAS: byte-identical checkpoints and honest timings
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import pytest

from capgan.config import TrainConfig
from capgan.training import init_state, save_state


def small_config(**overrides) -> TrainConfig:
    base = dict(
        k_stages=2,
        stage_sizes=(16, 32),
        word_dim=8,
        ca_dim=4,
        noise_dim=4,
        channels=8,
        batch_size=4,
        total_steps=4,
        checkpoint_every=2,
        train_scenes=16,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_state():
    return init_state(small_config())


@pytest.fixture(scope="session")
def tiny_ckpt(tmp_path_factory, tiny_state):
    path = tmp_path_factory.mktemp("ckpt") / "tiny.bin"
    save_state(tiny_state, str(path))
    return str(path)
