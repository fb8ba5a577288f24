"""Batch extraction: audio list in, ``.knnf`` frames (and manifest) out."""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetError
from .features import log_mel, read_wav
from .model import DEFAULT_TAP, TAP_POINTS, CtcEncoder, load_checkpoint
from .writer import FramesWriter


@dataclass(frozen=True)
class ExtractSummary:
    frames_path: Path
    manifest_path: Path | None
    vocab_path: Path
    utterances: int
    frames: int


def read_wav_scp(path) -> list[tuple[str, Path]]:
    """Kaldi-style list: one "utt_id /path/to.wav" per line."""
    entries: list[tuple[str, Path]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(maxsplit=1)
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'utt_id path'")
        utt_id, wav = parts
        if utt_id in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
        seen.add(utt_id)
        entries.append((utt_id, Path(wav)))
    if not entries:
        raise DatasetError(f"{path}: empty wav list")
    return entries


def read_text_file(path) -> dict[str, str]:
    """Transcripts: one "utt_id the transcript ..." per line."""
    texts: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(maxsplit=1)
        utt_id = parts[0]
        if utt_id in texts:
            raise DatasetError(f"{path}:{lineno}: duplicate utt_id {utt_id!r}")
        texts[utt_id] = parts[1] if len(parts) == 2 else ""
    return texts


def resolve_dataset(wavs) -> tuple[list[tuple[str, Path]], dict[str, str] | None]:
    """Accept a wav.scp path or a dataset directory holding wav.scp (+ text)."""
    wavs = Path(wavs)
    if wavs.is_dir():
        scp = wavs / "wav.scp"
        if not scp.exists():
            raise DatasetError(f"{wavs}: no wav.scp in dataset directory")
        text = wavs / "text"
        return read_wav_scp(scp), read_text_file(text) if text.exists() else None
    return read_wav_scp(wavs), None


def extract(ckpt_path, wavs, out_dir, tap: str = DEFAULT_TAP,
            text_path=None) -> ExtractSummary:
    """Run the checkpoint over every listed waveform and write frames.

    Keys are the frames tapped at ``tap`` in the final encoder block,
    posteriors are the CTC-head softmax (probability rows). Inference is
    eval-mode and single-threaded per utterance, so repeated runs over
    the same inputs produce identical files. The checkpoint's token list
    is written next to the frames so the datastore builder can consume
    the output directly.
    """
    if tap not in TAP_POINTS:
        raise ValueError(f"tap must be one of {TAP_POINTS}, got {tap!r}")
    model: CtcEncoder = load_checkpoint(ckpt_path)
    cfg = model.config
    entries, dir_texts = resolve_dataset(wavs)
    texts = read_text_file(text_path) if text_path else dir_texts

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames_path = out_dir / "frames.knnf"
    vocab_path = out_dir / "vocab.txt"
    with FramesWriter(frames_path, dim=cfg.d_model, vocab=cfg.vocab_size) as w:
        for utt_id, wav_path in entries:
            wav = read_wav(wav_path, cfg.sample_rate)
            feats = log_mel(wav, cfg.num_mels, cfg.n_fft, cfg.hop_length,
                            cfg.sample_rate)
            tensors = model.encode(feats)
            w.add(utt_id, tensors[tap].numpy(), tensors["posteriors"].numpy())
        utterances, frames = w.utterances, w.frames

    vocab_path.write_text("\n".join(cfg.tokens) + "\n", encoding="utf-8")

    manifest_path = None
    if texts is not None:
        missing = [u for u, _ in entries if u not in texts]
        if missing:
            raise DatasetError(
                f"transcripts missing for {len(missing)} utterances "
                f"(first: {missing[0]!r})")
        manifest_path = out_dir / "manifest.jsonl"
        with open(manifest_path, "w", encoding="utf-8") as f:
            for utt_id, _ in entries:
                f.write(json.dumps({"utt_id": utt_id, "text": texts[utt_id]},
                                   ensure_ascii=False) + "\n")
    else:
        print("warning: no transcripts found; manifest omitted", file=sys.stderr)

    return ExtractSummary(frames_path=frames_path, manifest_path=manifest_path,
                          vocab_path=vocab_path, utterances=utterances,
                          frames=frames)
