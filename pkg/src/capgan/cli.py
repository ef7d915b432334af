"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 io/format error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import CheckpointError
from .config import ABLATION_FLAGS, ConfigError, TrainConfig, convert_value, load_config, parse_config_text
from .data import dump_dataset
from .imgio import parse_pgm, pgm_bytes, ppm_bytes
from .seeding import SALT_GENERATE, stream_rng
from .text import tokenize
from .training import (
    TrainingDiverged,
    dump_attention,
    evaluate_manipulation,
    init_state,
    l2_metrics,
    load_state,
    pixel_sq_distance,
    train,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the documented contract is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="capgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="key=value config file; defaults apply when omitted")
    p.add_argument(
        "--ablate",
        action="append",
        default=[],
        choices=ABLATION_FLAGS,
        help="disable a model component (repeatable)",
    )
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
    p.add_argument("--out", help="run directory (default runs/<config-hash>)")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint; excludes --config")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="render a caption to PPM images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("manipulate", help="render a caption and an edited caption with the same latent")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--edited", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", help="PGM region mask; enables inside/outside metrics")
    p.set_defaults(func=_cmd_manipulate)

    p = sub.add_parser("eval", help="edit-locality metrics over generated pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--seed", type=int, help="latent stream seed (default: training seed)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("dump-attention", help="write per-word heatmaps and a channel report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_dump_attention)

    p = sub.add_parser("dataset-dump", help="write synthetic scenes to disk")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_dataset_dump)

    p = sub.add_parser("serve", help="run the HTTP manipulation service")
    p.add_argument("--ckpt", help="trained checkpoint to serve")
    p.add_argument("--config", help="serve fresh untrained weights from a config")
    p.add_argument("--port", type=int, help="default: CGAN_PORT env var, else 8765")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", help="static files served under /ui (default: frontend/dist if present)")
    p.add_argument("--max-sessions", type=int, default=256)
    p.set_defaults(func=_cmd_serve)

    return parser


def _parse_overrides(pairs: list[str], flags: list[str]) -> dict[str, object]:
    overrides: dict[str, object] = {flag: True for flag in flags}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        key, raw = pair.split("=", 1)
        overrides[key.strip()] = convert_value(key.strip(), raw)
    return overrides


def _require_finite(arrays, what: str) -> None:
    for a in arrays:
        if not np.isfinite(np.asarray(a, dtype=float)).all():
            raise TrainingDiverged(f"non-finite values in {what}", None)


def _render_pair(args) -> tuple:
    state = load_state(args.ckpt)
    model = state.model
    tokens = tokenize(args.caption)
    model.vocab.encode(tokens, strict=True)
    z = stream_rng(args.seed, SALT_GENERATE, 0).standard_normal((1, model.cfg.noise_dim))
    return state, model, tokens, z


def _write(path: str, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def _cmd_train(args) -> int:
    if args.resume and args.config:
        raise ConfigError("--resume continues an existing run; drop --config")
    overrides = _parse_overrides(args.overrides, args.ablate)
    if args.resume:
        if overrides:
            raise ConfigError("--resume takes its config from the checkpoint; drop --set/--ablate")
        state = load_state(args.resume)
    else:
        if args.config:
            cfg = load_config(args.config, overrides)
        else:
            cfg = parse_config_text("", overrides)
        state = init_state(cfg)
    cfg = state.cfg
    out_dir = args.out or os.path.join("runs", cfg.config_hash())
    print(f"training {cfg.total_steps} steps -> {out_dir} (config {cfg.config_hash()})")

    def log(step, d_bd, g_bd):
        if step % args.log_every == 0 or step == cfg.total_steps:
            print(f"step {step:6d}  d_loss={d_bd.total:.4f}  g_loss={g_bd.total:.4f}", flush=True)

    train(state, out_dir, log)
    print(f"done; latest checkpoint in {out_dir}")
    return 0


def _cmd_generate(args) -> int:
    _state, model, tokens, z = _render_pair(args)
    result = model.render([tokens], z)
    _require_finite([img for img in result.images], "generated images")
    os.makedirs(args.out, exist_ok=True)
    for img in result.images:
        size = img.shape[2]
        path = os.path.join(args.out, f"stage_{size:02d}.ppm")
        _write(path, ppm_bytes(img[0]))
        print(path)
    final = os.path.join(args.out, "final.ppm")
    _write(final, ppm_bytes(result.final[0]))
    print(final)
    return 0


def _cmd_manipulate(args) -> int:
    state, model, tokens, z = _render_pair(args)
    edited = tokenize(args.edited)
    model.vocab.encode(edited, strict=True)
    base = model.render([tokens], z)
    changed = model.render([edited], z)
    _require_finite([base.final, changed.final], "generated images")
    os.makedirs(args.out, exist_ok=True)

    a, b = base.final[0], changed.final[0]
    _write(os.path.join(args.out, "original.ppm"), ppm_bytes(a))
    _write(os.path.join(args.out, "edited.ppm"), ppm_bytes(b))
    diff = pixel_sq_distance(a, b)
    span = diff.max()
    _write(os.path.join(args.out, "diff.pgm"), pgm_bytes(diff / span if span > 0 else diff))

    if args.mask:
        with open(args.mask, "rb") as fh:
            mask = parse_pgm(fh.read()) > 0.5
        if mask.shape != a.shape[1:]:
            raise ValueError(f"mask shape {mask.shape} does not match image {a.shape[1:]}")
        metrics = l2_metrics(a, b, mask)
    else:
        metrics = {"l2_full": l2_metrics(a, b, np.zeros(a.shape[1:], dtype=bool))["l2_full"]}
    for k, v in metrics.items():
        print(f"{k}={v:.6f}")
    return 0


def _cmd_eval(args) -> int:
    state = load_state(args.ckpt)
    metrics = evaluate_manipulation(state.model, args.pairs, eval_seed=args.seed)
    _require_finite(list(metrics.values()), "evaluation metrics")
    for k, v in metrics.items():
        print(f"{k}={v:.4f}")
    return 0


def _cmd_dump_attention(args) -> int:
    state = load_state(args.ckpt)
    tokens = tokenize(args.caption)
    state.model.vocab.encode(tokens, strict=True)
    manifest = dump_attention(state.model, tokens, args.out, z_seed=args.seed)
    print(f"{len(manifest['heatmaps'])} heatmaps -> {args.out}")
    print(manifest["report"])
    return 0


def _cmd_dataset_dump(args) -> int:
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    dump_dataset(args.out, args.count, global_seed=args.seed)
    print(f"{args.count} scenes -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    from .service import ManipulationService, create_server, resolve_port

    if args.ckpt and args.config:
        raise ConfigError("pass either --ckpt or --config, not both")
    ui_dir = args.ui_dir
    if ui_dir is None and os.path.isdir(os.path.join("frontend", "dist")):
        ui_dir = os.path.join("frontend", "dist")
    kw = {"ui_dir": ui_dir, "max_sessions": args.max_sessions}
    if args.ckpt:
        service = ManipulationService.from_checkpoint(args.ckpt, **kw)
    elif args.config:
        service = ManipulationService.from_config(load_config(args.config), **kw)
    else:
        print("no checkpoint given; serving untrained weights", file=sys.stderr)
        service = ManipulationService.from_config(TrainConfig(), **kw)

    port = resolve_port(args.port)
    server = create_server(service, args.host, port)
    host, actual_port = server.server_address[:2]
    print(f"listening on http://{host}:{actual_port} (ui: {ui_dir or 'none'})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
