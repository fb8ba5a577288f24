"""Waveform loading and log-mel front end.

Audio comes in as 16-bit PCM WAV at the rate the checkpoint was built
for; multi-channel input is downmixed by averaging. Features are log-mel
filterbank energies over a Hann-window STFT (center=False, so frame t
covers samples [t*hop, t*hop + n_fft))."""
from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
import torch

from .errors import AudioError


def read_wav(path, expected_rate: int) -> np.ndarray:
    """Load PCM16 WAV as float32 in [-1, 1], mono (channels averaged)."""
    path = Path(path)
    if not path.exists():
        raise AudioError(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            frames = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioError(f"{path}: not a readable WAV file ({exc})")
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if rate != expected_rate:
        raise AudioError(
            f"{path}: sample rate {rate} != model rate {expected_rate} "
            "(resample the audio first)")
    pcm = np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0
    if channels > 1:
        pcm = pcm.reshape(-1, channels).mean(axis=1)
    return pcm


def mel_filterbank(num_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters, (num_mels, n_fft // 2 + 1) float32."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0),
                             num_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((n_fft + 1) * hz_points / sample_rate).astype(int)
    fbank = np.zeros((num_mels, n_bins), dtype=np.float64)
    for m in range(1, num_mels + 1):
        left, center, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, center):
            if center > left:
                fbank[m - 1, k] = (k - left) / (center - left)
        for k in range(center, right):
            if right > center:
                fbank[m - 1, k] = (right - k) / (right - center)
    return fbank.astype(np.float32)


def log_mel(wav: np.ndarray, num_mels: int, n_fft: int, hop_length: int,
            sample_rate: int) -> torch.Tensor:
    """(T, num_mels) float32 log-mel energies."""
    if wav.shape[0] < n_fft:
        raise AudioError(
            f"waveform has {wav.shape[0]} samples, need at least {n_fft}")
    x = torch.from_numpy(np.ascontiguousarray(wav))
    window = torch.hann_window(n_fft, dtype=torch.float32)
    spec = torch.stft(x, n_fft=n_fft, hop_length=hop_length, window=window,
                      center=False, return_complex=True)
    power = spec.abs().pow(2.0)  # (n_bins, T)
    mel = torch.from_numpy(mel_filterbank(num_mels, n_fft, sample_rate)) @ power
    return torch.log(mel + 1e-6).transpose(0, 1).contiguous()
