"""CLI: run a checkpoint over audio and emit .knnf frames.

Exit codes: 0 success, 1 usage, 2 data error (same convention as the
decoding toolkit this feeds).
"""
from __future__ import annotations

import argparse
import sys

from .errors import ExtractorError
from .extract import extract
from .model import DEFAULT_TAP, TAP_POINTS, ModelConfig, init_model, save_checkpoint


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def cmd_extract(args) -> int:
    summary = extract(args.ckpt, args.wavs, args.out, tap=args.tap,
                      text_path=args.text)
    print(f"frames: {summary.frames_path}")
    print(f"vocab: {summary.vocab_path}")
    if summary.manifest_path:
        print(f"manifest: {summary.manifest_path}")
    print(f"utterances: {summary.utterances}")
    print(f"total_frames: {summary.frames}")
    return 0


def cmd_init_ckpt(args) -> int:
    tokens = args.vocab.read_text(encoding="utf-8").splitlines()
    config = ModelConfig(tokens=tuple(tokens), blank_id=args.blank_id,
                         num_mels=args.num_mels, d_model=args.d_model,
                         num_layers=args.layers, num_heads=args.heads,
                         ffn_dim=args.ffn_dim, sample_rate=args.sample_rate)
    save_checkpoint(args.out, init_model(config, seed=args.seed))
    print(f"checkpoint: {args.out}")
    print(f"vocab: {config.vocab_size} tokens, keys dim {config.d_model}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    import pathlib

    parser = _Parser(prog="ctcextract",
                     description="Dump CTC model frames to .knnf files")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run a checkpoint over listed audio")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wavs", required=True,
                   help="wav.scp file, or a dataset dir with wav.scp (+ text)")
    p.add_argument("--text", default=None,
                   help="transcript file (utt_id followed by the text)")
    p.add_argument("--tap", choices=TAP_POINTS, default=DEFAULT_TAP,
                   help="which final-block tensor becomes the keys")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("init-ckpt",
                       help="write a randomly initialized compatible checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", required=True, type=pathlib.Path,
                   help="token file, one per line (line index = id)")
    p.add_argument("--blank-id", type=int, default=0)
    p.add_argument("--num-mels", type=int, default=40)
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--ffn-dim", type=int, default=64)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init_ckpt)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ExtractorError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
