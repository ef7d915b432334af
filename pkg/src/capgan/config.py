"""Training configuration and the flat key=value config file format.

Unknown keys are rejected so typos fail loudly. Desk-scale defaults are
small enough to train on one CPU core; the classic large-scale settings
(word_dim 256, caption length 18, sizes 64/128/256) remain valid values.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

ABLATION_FLAGS = ("no_channel_attn", "no_word_disc", "no_perceptual", "text_adaptive_pooling")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    k_stages: int = 3
    stage_sizes: tuple[int, ...] = (8, 16, 32)
    word_dim: int = 32
    ca_dim: int = 16
    noise_dim: int = 16
    channels: int = 32
    l_max: int = 12
    lambda1: float = 0.5
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 5.0
    # weak KL: a 16-dim conditioning posterior collapses onto its prior
    # within a few thousand steps at 1.0, taking caption control with it
    kl_weight: float = 0.05
    tau: float = 0.1
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 16
    total_steps: int = 10000
    d_every: int = 1
    seed: int = 0
    checkpoint_every: int = 1000
    train_scenes: int = 10000
    no_channel_attn: bool = False
    no_word_disc: bool = False
    no_perceptual: bool = False
    text_adaptive_pooling: bool = False
    per_stage_word_disc: bool = False
    share_text_encoder: bool = True
    d_only: bool = False

    def __post_init__(self):
        self.stage_sizes = tuple(int(s) for s in self.stage_sizes)
        self.validate()

    def validate(self) -> None:
        if self.k_stages < 1:
            raise ConfigError("k_stages must be >= 1")
        if len(self.stage_sizes) != self.k_stages:
            raise ConfigError(f"stage_sizes has {len(self.stage_sizes)} entries for k_stages={self.k_stages}")
        for a, b in zip(self.stage_sizes, self.stage_sizes[1:]):
            if b != 2 * a:
                raise ConfigError(f"stage sizes must strictly double, got {self.stage_sizes}")
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "kl_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.word_dim % 2:
            raise ConfigError("word_dim must be even")
        if self.batch_size < 1 or self.l_max < 1 or self.tau <= 0:
            raise ConfigError("batch_size/l_max must be >= 1 and tau > 0")
        if self.d_every < 1:
            raise ConfigError("d_every must be >= 1")

    @property
    def word_disc_sizes(self) -> tuple[int, ...]:
        if self.no_word_disc:
            return ()
        return self.stage_sizes if self.per_stage_word_disc else (self.stage_sizes[-1],)

    def to_flat(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                out[f.name] = "true" if v else "false"
            elif isinstance(v, tuple):
                out[f.name] = ",".join(str(x) for x in v)
            else:
                out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out

    def config_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in sorted(self.to_flat().items()))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _convert(name: str, raw: str):
    ftype = _FIELD_TYPES[name]
    raw = raw.strip()
    if ftype == "bool":
        low = raw.lower()
        if low not in ("true", "false", "1", "0"):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return low in ("true", "1")
    if ftype == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}") from None
    if ftype == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from None
    # tuple[int, ...]
    try:
        return tuple(int(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated integers, got {raw!r}") from None


def convert_value(name: str, raw: str):
    """Typed conversion for a single key=value override."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown key {name!r}")
    return _convert(name, raw)


def parse_config_text(text: str, overrides: dict[str, object] | None = None) -> TrainConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    if overrides:
        values.update(overrides)
    try:
        return TrainConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str, overrides: dict[str, object] | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), overrides)


def config_to_tensors(cfg: TrainConfig) -> dict[str, "object"]:
    """Config as rank-0/1 float arrays for embedding in the checkpoint table."""
    import numpy as np

    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            arr = np.array(1.0 if v else 0.0)
        elif isinstance(v, tuple):
            arr = np.array([float(x) for x in v])
        else:
            arr = np.array(float(v))
        out[f"config/{f.name}"] = arr
    return out


def config_from_tensors(table: dict[str, "object"]) -> TrainConfig:
    values: dict[str, object] = {}
    for name, ftype in _FIELD_TYPES.items():
        key = f"config/{name}"
        if key not in table:
            raise ConfigError(f"checkpoint missing config entry {name!r}")
        arr = table[key]
        if ftype == "bool":
            values[name] = bool(float(arr) != 0.0)
        elif ftype == "int":
            values[name] = int(float(arr))
        elif ftype == "float":
            values[name] = float(arr)
        else:
            values[name] = tuple(int(x) for x in list(arr.reshape(-1)))
    return TrainConfig(**values)
