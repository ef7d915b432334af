"""Command-line interface: subcommand behavior and the exit-code contract."""
import re

import numpy as np
import pytest

from capgan.cli import main
from capgan.imgio import parse_pgm, parse_ppm
from capgan.training import load_state, save_state

CAPTION = "the bird has a red head and blue belly and cyan wings"
EDITED = "the bird has a green head and blue belly and cyan wings"


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- generate ---------------------------------------------------------------


def test_generate_writes_stage_images(tiny_ckpt, tmp_path, capsys):
    out = tmp_path / "gen"
    code, stdout, _ = run(
        capsys, "generate", "--ckpt", tiny_ckpt, "--caption", CAPTION, "--seed", "7", "--out", str(out)
    )
    assert code == 0
    for name in ("stage_16.ppm", "stage_32.ppm", "final.ppm"):
        assert (out / name).is_file()
        assert str(out / name) in stdout
    img = parse_ppm((out / "final.ppm").read_bytes())
    assert img.shape == (3, 32, 32)
    assert (out / "final.ppm").read_bytes() == (out / "stage_32.ppm").read_bytes()


def test_generate_same_seed_is_byte_identical(tiny_ckpt, tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code, _, _ = run(
            capsys, "generate", "--ckpt", tiny_ckpt, "--caption", CAPTION, "--seed", "11", "--out", str(out)
        )
        assert code == 0
        outs.append((out / "final.ppm").read_bytes())
    assert outs[0] == outs[1]


# -- manipulate ---------------------------------------------------------------


def test_manipulate_emits_images_diff_and_metric(tiny_ckpt, tmp_path, capsys):
    out = tmp_path / "man"
    code, stdout, _ = run(
        capsys,
        "manipulate",
        "--ckpt", tiny_ckpt,
        "--caption", CAPTION,
        "--edited", EDITED,
        "--seed", "3",
        "--out", str(out),
    )
    assert code == 0
    assert parse_ppm((out / "original.ppm").read_bytes()).shape == (3, 32, 32)
    assert parse_ppm((out / "edited.ppm").read_bytes()).shape == (3, 32, 32)
    assert parse_pgm((out / "diff.pgm").read_bytes()).shape == (32, 32)
    m = re.search(r"^l2_full=(\d+\.\d{6})$", stdout, re.M)
    assert m and float(m.group(1)) >= 0.0


def test_manipulate_with_mask_reports_split_metrics(tiny_ckpt, tmp_path, capsys):
    ds = tmp_path / "ds"
    code, _, _ = run(capsys, "dataset-dump", "--count", "1", "--out", str(ds))
    assert code == 0
    mask = ds / "scene_00000" / "mask_head.pgm"
    code, stdout, _ = run(
        capsys,
        "manipulate",
        "--ckpt", tiny_ckpt,
        "--caption", CAPTION,
        "--edited", EDITED,
        "--seed", "3",
        "--out", str(tmp_path / "man2"),
        "--mask", str(mask),
    )
    assert code == 0
    vals = dict(line.split("=") for line in stdout.strip().splitlines() if "=" in line)
    assert set(vals) == {"l2_full", "l2_inside_mask", "l2_outside_mask"}
    full = float(vals["l2_full"])
    assert float(vals["l2_inside_mask"]) + float(vals["l2_outside_mask"]) == pytest.approx(full, abs=2e-6)


# -- eval ----------------------------------------------------------------------


def test_eval_prints_key_value_lines(tiny_ckpt, capsys):
    code, stdout, _ = run(capsys, "eval", "--ckpt", tiny_ckpt, "--pairs", "3")
    assert code == 0
    lines = stdout.strip().splitlines()
    assert len(lines) == 4
    for line in lines:
        assert re.fullmatch(r"[a-z0-9_]+=\d+\.\d{4}", line), line
    keys = [line.split("=")[0] for line in lines]
    assert "l2_outside_mask" in keys and "attr_flip_rate" in keys


# -- dump-attention / dataset-dump ---------------------------------------------


def test_dump_attention_writes_heatmaps(tiny_ckpt, tmp_path, capsys):
    out = tmp_path / "attn"
    code, stdout, _ = run(
        capsys, "dump-attention", "--ckpt", tiny_ckpt, "--caption", CAPTION, "--out", str(out)
    )
    assert code == 0
    heatmaps = sorted(out.glob("stage*_word*.pgm"))
    assert len(heatmaps) == 12  # one per caption word on the attended stage
    assert (out / "channel_words.txt").is_file()
    assert "12 heatmaps" in stdout


def test_dataset_dump_layout(tmp_path, capsys):
    out = tmp_path / "ds"
    code, _, _ = run(capsys, "dataset-dump", "--count", "2", "--out", str(out), "--seed", "4")
    assert code == 0
    for i in range(2):
        scene = out / f"scene_{i:05d}"
        assert (scene / "image.ppm").is_file()
        assert (scene / "caption.txt").read_text().startswith("the bird has a ")
        assert (scene / "mask_head.pgm").is_file()


# -- train ----------------------------------------------------------------------


def test_train_tiny_run_and_ablation_flag(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(
        capsys,
        "train",
        "--set", "k_stages=2", "--set", "stage_sizes=16,32",
        "--set", "word_dim=8", "--set", "ca_dim=4", "--set", "noise_dim=4",
        "--set", "channels=8", "--set", "batch_size=4", "--set", "total_steps=2",
        "--set", "checkpoint_every=2", "--set", "train_scenes=8",
        "--ablate", "no_word_disc",
        "--log-every", "1",
        "--out", str(out),
    )
    assert code == 0
    assert (out / "ckpt_000002.bin").is_file()
    assert (out / "latest.bin").is_file()
    assert "step" in stdout and "d_loss=" in stdout
    cfg = load_state(str(out / "latest.bin")).cfg
    assert cfg.no_word_disc is True


def test_train_config_file(tmp_path, capsys):
    cfg_file = tmp_path / "t.cfg"
    cfg_file.write_text(
        "k_stages=2\nstage_sizes=16,32\nword_dim=8\nca_dim=4\nnoise_dim=4\n"
        "channels=8\nbatch_size=4\ntotal_steps=2\ncheckpoint_every=2\ntrain_scenes=8\n"
    )
    out = tmp_path / "run"
    code, _, _ = run(capsys, "train", "--config", str(cfg_file), "--out", str(out), "--log-every", "1")
    assert code == 0
    assert (out / "latest.bin").is_file()


# -- exit codes ---------------------------------------------------------------


def test_unknown_flag_is_usage_error(capsys):
    code, _, stderr = run(capsys, "generate", "--bogus")
    assert code == 1
    assert "usage" in stderr.lower()


def test_unknown_subcommand_is_usage_error(capsys):
    code, _, _ = run(capsys, "frobnicate")
    assert code == 1


def test_missing_subcommand_is_usage_error(capsys):
    code, _, _ = run(capsys)
    assert code == 1


def test_missing_checkpoint_is_io_error(tmp_path, capsys):
    code, _, stderr = run(
        capsys, "generate", "--ckpt", str(tmp_path / "nope.bin"), "--caption", CAPTION,
        "--seed", "1", "--out", str(tmp_path / "o"),
    )
    assert code == 2
    assert "error" in stderr


def test_oov_caption_is_format_error(tiny_ckpt, tmp_path, capsys):
    code, _, stderr = run(
        capsys, "generate", "--ckpt", tiny_ckpt,
        "--caption", "the bird has a purple head and blue belly and cyan wings",
        "--seed", "1", "--out", str(tmp_path / "o"),
    )
    assert code == 2
    assert "purple" in stderr


def test_unknown_config_key_is_format_error(tmp_path, capsys):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("definitely_not_a_key=1\n")
    code, _, stderr = run(capsys, "train", "--config", str(cfg_file))
    assert code == 2
    assert "unknown key" in stderr


def test_bad_set_value_is_format_error(capsys):
    code, _, _ = run(capsys, "train", "--set", "total_steps=soon")
    assert code == 2


def test_malformed_set_pair_is_format_error(capsys):
    code, _, _ = run(capsys, "train", "--set", "total_steps")
    assert code == 2


def test_resume_excludes_config(tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--resume", "x.bin", "--config", "y.cfg")
    assert code == 2


def test_invalid_ablation_flag_is_usage_error(capsys):
    code, _, _ = run(capsys, "train", "--ablate", "no_such_component")
    assert code == 1


def test_zero_count_dataset_dump_is_rejected(tmp_path, capsys):
    code, _, _ = run(capsys, "dataset-dump", "--count", "0", "--out", str(tmp_path / "ds"))
    assert code == 2


def test_nan_weights_are_a_numeric_failure(tiny_ckpt, tmp_path, capsys):
    state = load_state(tiny_ckpt)
    _name, tensor = next(iter(state.model.named_tensors()))
    tensor.data[...] = np.nan
    broken = tmp_path / "broken.bin"
    save_state(state, str(broken))
    code, _, stderr = run(
        capsys, "generate", "--ckpt", str(broken), "--caption", CAPTION,
        "--seed", "1", "--out", str(tmp_path / "o"),
    )
    assert code == 3
    assert "numeric" in stderr
