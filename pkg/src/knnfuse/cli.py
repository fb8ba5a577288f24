"""Command-line surface: synth, build, adapt, index, decode, eval, sweep.

Exit codes: 0 success, 1 usage error, 2 data/format error. All commands
are deterministic given identical inputs and flags; randomness (IVF
training) is controlled by an explicit --seed.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .datastore import build_datastore, datastore_stats, load_datastore, save_datastore
from .decoder import DecodeResult, aggregate_counters, decode_corpus
from .errors import DimMismatch, KnnFuseError, UndefinedRate
from .frames_io import Manifest, read_frames, read_manifest
from .index import load_ivf, save_ivf, train_ivf
from .metrics import ErrorCounts, align_and_count, corpus_error_rate, tokenize
from .synth import SynthConfig, generate_corpus
from .vocab import FusionConfig, Vocabulary, load_vocabulary


@dataclass(frozen=True)
class RunConfig:
    """Decode-side knobs a command resolved from its flags."""

    fusion: FusionConfig
    index_kind: str = "flat"
    nprobe: int | None = None
    ivf_index_path: str | None = None
    n_centroids: int | None = None
    max_iters: int = 25
    seed: int = 0
    threads: int = 1


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; our convention reserves 2 for
    # data/format problems, so usage maps to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _load_vocab_checked(path, blank_id: int, expected: int | None) -> Vocabulary:
    vocab = load_vocabulary(path, blank_id=blank_id)
    if expected is not None and len(vocab) != expected:
        raise DimMismatch(
            f"vocabulary has {len(vocab)} tokens but data expects {expected}")
    return vocab


def _build_impl(frames_path, vocab_path, out_path, skip_blank: bool,
                blank_id: int, tag: str) -> int:
    header, utts = read_frames(frames_path)
    vocab = _load_vocab_checked(vocab_path, blank_id, header.vocab)
    ds = build_datastore(utts, skip_blank_store=skip_blank, blank_id=vocab.blank_id,
                         dim=header.dim, vocab=header.vocab, source_tag=tag)
    save_datastore(out_path, ds)
    stats = datastore_stats(ds)
    print(f"entries: {stats['count']}")
    print(f"bytes: {stats['bytes']}")
    print(f"blank_fraction_of_source: {stats['blank_fraction_of_source']:.6f}")
    print(f"pruned: {ds.pruned}")
    if ds.count == 0:
        _warn("datastore is empty")
    return 0


def cmd_build(args) -> int:
    tag = args.tag if args.tag is not None else f"build:{args.frames}"
    return _build_impl(args.frames, args.vocab, args.out, args.skip_blank,
                       args.blank_id, tag)


def cmd_adapt(args) -> int:
    # adaptation builds on unlabeled frames only; a manifest here means
    # the caller expected transcripts to matter, so refuse loudly
    if args.manifest is not None:
        print("knnfuse adapt: error: adapt takes no manifest; "
              "the datastore is built from pseudo labels alone", file=sys.stderr)
        return 1
    return _build_impl(args.frames, args.vocab, args.out, args.skip_blank,
                       args.blank_id, f"adapt:{args.frames}")


def cmd_index(args) -> int:
    ds = load_datastore(args.datastore)
    index = train_ivf(ds, n_centroids=args.n_centroids, max_iters=args.max_iters,
                      seed=args.seed)
    save_ivf(args.out, index)
    print(f"centroids: {index.num_centroids}")
    print(f"entries: {ds.count}")
    return 0


def _resolve_blank_id(args, ds) -> int:
    if args.blank_id is None:
        return ds.blank_id
    if args.blank_id != ds.blank_id:
        _warn(f"blank_id {args.blank_id} differs from datastore blank_id {ds.blank_id}")
    return args.blank_id


def _run_config(args, ds, lam: float) -> RunConfig:
    fusion = FusionConfig(lam=lam, tau=args.tau, k=args.k,
                          skip_blank_decode=args.skip_blank_decode,
                          blank_id=_resolve_blank_id(args, ds),
                          distance_kind=args.distance_kind)
    return RunConfig(fusion=fusion, index_kind=args.index, nprobe=args.nprobe,
                     ivf_index_path=args.ivf_index, n_centroids=args.n_centroids,
                     max_iters=args.max_iters, seed=args.seed,
                     threads=args.threads)


def _resolve_index(run: RunConfig, ds):
    if run.index_kind != "ivf":
        return None
    if ds.count == 0:
        _warn("empty datastore; decoding without an index")
        return None
    if run.ivf_index_path:
        return load_ivf(run.ivf_index_path)
    return train_ivf(ds, n_centroids=run.n_centroids, max_iters=run.max_iters,
                     seed=run.seed)


def _write_trace(path, results: list[DecodeResult]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            for t, d in enumerate(r.frames):
                f.write(json.dumps({
                    "utt_id": r.utt_id,
                    "frame": t,
                    "ctc_argmax": d.ctc_token,
                    "knn_top1": d.knn_token,
                    "fused_argmax": d.token_id,
                    "skipped": d.skipped,
                }) + "\n")


def cmd_decode(args) -> int:
    header, utts = read_frames(args.frames)
    ds = load_datastore(args.datastore)
    if header.dim != ds.dim or header.vocab != ds.vocab:
        raise DimMismatch(
            f"frames are {header.dim}/{header.vocab} but datastore is "
            f"{ds.dim}/{ds.vocab} (dim/vocab)")
    vocab = _load_vocab_checked(args.vocab, ds.blank_id, ds.vocab)
    run = _run_config(args, ds, args.lam)
    index = _resolve_index(run, ds)
    results = decode_corpus(utts, ds, run.fusion, index=index, nprobe=run.nprobe,
                            threads=run.threads)
    with open(args.out, "w", encoding="utf-8") as f:
        for r in results:
            f.write(json.dumps({"utt_id": r.utt_id,
                                "text": vocab.text(r.token_ids, args.joiner)},
                               ensure_ascii=False) + "\n")
    counters = aggregate_counters(results)
    if args.trace:
        _write_trace(args.trace, results)
    if args.stats_out:
        with open(args.stats_out, "w", encoding="utf-8") as f:
            json.dump(counters, f, indent=2)
            f.write("\n")
    print(
        "decoded {utterances} utterances ({frames} frames): "
        "{queries_issued} queries, {skipped_frames} skipped, "
        "{empty_retrieval_fallbacks} empty-retrieval fallbacks".format(**counters),
        file=sys.stderr)
    if counters["empty_retrieval_fallbacks"]:
        _warn(f"{counters['empty_retrieval_fallbacks']} frames fell back to CTC "
              "because retrieval returned nothing")
    return 0


def _paired_counts(manifest: Manifest, hyp_texts: dict[str, str], unit: str,
                   threads: int = 1) -> ErrorCounts:
    pairs = []
    for entry in manifest.entries:
        if entry.utt_id not in hyp_texts:
            _warn(f"{entry.utt_id}: missing from hypotheses; scored as full deletion")
        hyp = hyp_texts.get(entry.utt_id, "")
        pairs.append((tokenize(entry.text, unit), tokenize(hyp, unit)))
    for utt_id in hyp_texts:
        if utt_id not in manifest.texts():
            _warn(f"{utt_id}: not in reference manifest; ignored")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(lambda p: align_and_count(*p), pairs))
        total = ErrorCounts()
        for c in counts:
            total = total + c
        if total.ref_len == 0:
            raise UndefinedRate("all references are empty")
        return total
    return corpus_error_rate(pairs)


def cmd_eval(args) -> int:
    manifest = read_manifest(args.ref)
    hyp_texts = read_manifest(args.hyp).texts()
    counts = _paired_counts(manifest, hyp_texts, args.unit, args.threads)
    print(f"unit: {args.unit}")
    print(f"utterances: {len(manifest)}")
    print(f"S: {counts.substitutions}  D: {counts.deletions}  "
          f"I: {counts.insertions}  C: {counts.correct}  ref_len: {counts.ref_len}")
    print(f"error_rate: {counts.rate:.4%}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(counts.as_json(), f, indent=2)
            f.write("\n")
    return 0


def parse_lambdas(spec: str) -> list[float]:
    """Either "start:stop:step" (inclusive endpoints) or "a,b,c"."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad lambda range {spec!r}, want start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("lambda step must be positive")
        vals = []
        i = 0
        while True:
            v = round(start + i * step, 10)
            if v > stop + 1e-9:
                break
            vals.append(v)
            i += 1
        return vals
    return [float(p) for p in spec.split(",")]


def cmd_sweep(args) -> int:
    header, utt_iter = read_frames(args.frames)
    utts = list(utt_iter)
    ds = load_datastore(args.datastore)
    vocab = _load_vocab_checked(args.vocab, ds.blank_id, ds.vocab)
    manifest = read_manifest(args.manifest)
    lambdas = parse_lambdas(args.lambdas)
    base = _run_config(args, ds, lam=0.0)
    index = _resolve_index(base, ds)
    rows = []
    for lam in lambdas:
        run = _run_config(args, ds, lam)
        results = decode_corpus(utts, ds, run.fusion, index=index, nprobe=run.nprobe,
                                threads=run.threads)
        hyp_texts = {r.utt_id: vocab.text(r.token_ids, args.joiner) for r in results}
        counts = _paired_counts(manifest, hyp_texts, args.unit)
        rows.append((lam, counts))
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["lambda", "rate", "S", "D", "I"])
        for lam, counts in rows:
            writer.writerow([repr(lam), repr(counts.rate), counts.substitutions,
                             counts.deletions, counts.insertions])
    best_lam, best = min(rows, key=lambda r: (r[1].rate, r[0]))
    print(f"best lambda: {best_lam} (rate {best.rate:.4%})")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed, num_utts=args.num_utts, frames_min=args.frames_min,
        frames_max=args.frames_max, num_classes=args.num_classes, dim=args.dim,
        blank_rate=args.blank_rate, noise_sigma=args.noise_sigma,
        posterior_error_rate=args.posterior_error_rate,
        posterior_sharpness=args.posterior_sharpness,
        center_shift=args.center_shift)
    summary = generate_corpus(cfg, args.out)
    print(f"frames: {summary.frames_path}")
    print(f"manifest: {summary.manifest_path}")
    print(f"labels: {summary.labels_path}")
    print(f"vocab: {summary.vocab_path}")
    print(f"utterances: {summary.num_utts}")
    print(f"total_frames: {summary.total_frames}")
    print(f"blank_frames: {summary.blank_frames}")
    return 0


def _add_decode_flags(p: argparse.ArgumentParser, include_lambda: bool = True) -> None:
    if include_lambda:
        p.add_argument("--lambda", dest="lam", type=float, default=0.0,
                       help="weight on the retrieved distribution (default 0)")
    p.add_argument("--tau", type=float, default=1.0,
                   help="temperature over neighbor distances (default 1)")
    p.add_argument("--k", type=int, default=1024,
                   help="neighbors per query (default 1024)")
    p.add_argument("--skip-blank-decode", action="store_true",
                   help="bypass retrieval on frames whose CTC argmax is blank")
    p.add_argument("--blank-id", type=int, default=None,
                   help="override the datastore's blank id")
    p.add_argument("--distance-kind", choices=("l2", "squared_l2"), default="l2")
    p.add_argument("--index", choices=("flat", "ivf"), default="flat")
    p.add_argument("--nprobe", type=int, default=None,
                   help="IVF lists to probe (default n_centroids/8)")
    p.add_argument("--ivf-index", default=None,
                   help="load a .knivf file instead of training in memory")
    p.add_argument("--n-centroids", type=int, default=None,
                   help="IVF centroid count (default sqrt(N))")
    p.add_argument("--max-iters", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--joiner", default="",
                   help="string between tokens when rendering text")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knnfuse",
                     description="Retrieval-augmented CTC decoding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-utts", type=int, default=20)
    p.add_argument("--frames-min", type=int, default=8)
    p.add_argument("--frames-max", type=int, default=24)
    p.add_argument("--num-classes", type=int, default=8)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--blank-rate", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--posterior-error-rate", type=float, default=0.0)
    p.add_argument("--posterior-sharpness", type=float, default=4.0)
    p.add_argument("--center-shift", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="build a datastore from frames")
    p.add_argument("--frames", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--skip-blank", action="store_true",
                   help="omit frames whose pseudo label is blank")
    p.add_argument("--blank-id", type=int, default=0)
    p.add_argument("--tag", default=None, help="provenance string")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("adapt",
                       help="build a datastore on unlabeled target-domain frames")
    p.add_argument("--frames", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--skip-blank", action="store_true")
    p.add_argument("--blank-id", type=int, default=0)
    p.add_argument("--manifest", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("index", help="train and save an IVF index")
    p.add_argument("--datastore", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-centroids", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("decode", help="fused decoding of a frames file")
    p.add_argument("--frames", required=True)
    p.add_argument("--datastore", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None,
                   help="write per-frame decisions as JSON lines")
    p.add_argument("--stats-out", default=None,
                   help="write decode counters as JSON")
    _add_decode_flags(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score hypotheses against a manifest")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--unit", choices=("char", "word"), default="char")
    p.add_argument("--json", default=None, help="also write a JSON report")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="decode at several lambdas and emit CSV")
    p.add_argument("--frames", required=True)
    p.add_argument("--datastore", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lambdas", default="0:1:0.1")
    p.add_argument("--out", required=True)
    p.add_argument("--unit", choices=("char", "word"), default="char")
    _add_decode_flags(p, include_lambda=False)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (KnnFuseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
