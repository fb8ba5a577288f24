from __future__ import annotations

import math
import wave
from pathlib import Path

import numpy as np
import pytest

from ctcextract import ModelConfig, init_model, save_checkpoint

TOKENS = ("<blank>", "a", "b", "c", "d", "e")
SAMPLE_RATE = 16000


def write_wav(path: Path, seconds: float, freq: float, rate: int = SAMPLE_RATE,
              channels: int = 1) -> None:
    t = np.arange(int(seconds * rate)) / rate
    signal = 0.4 * np.sin(2 * math.pi * freq * t) + 0.1 * np.sin(2 * math.pi * 3.1 * freq * t)
    pcm = (signal * 32767).astype("<i2")
    if channels > 1:
        pcm = np.repeat(pcm[:, None], channels, axis=1)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("ckpt")
    vocab = d / "vocab.txt"
    vocab.write_text("\n".join(TOKENS) + "\n")
    config = ModelConfig(tokens=TOKENS, d_model=16, num_layers=2, num_heads=2,
                         ffn_dim=32, num_mels=24)
    path = d / "model.pt"
    save_checkpoint(path, init_model(config, seed=7))
    return path


@pytest.fixture(scope="session")
def dataset(tmp_path_factory) -> Path:
    """Five short utterances with wav.scp and transcripts."""
    d = tmp_path_factory.mktemp("data")
    scp_lines = []
    text_lines = []
    for i in range(5):
        wav = d / f"utt{i}.wav"
        write_wav(wav, seconds=0.25 + 0.05 * i, freq=200.0 + 90.0 * i)
        scp_lines.append(f"utt{i} {wav}")
        text_lines.append(f"utt{i} ab c{i % 2}")
    (d / "wav.scp").write_text("\n".join(scp_lines) + "\n")
    (d / "text").write_text("\n".join(text_lines) + "\n")
    return d
