"""Tappable CTC encoder and its checkpoint format.

The encoder is a pre-norm self-attention stack with an FFN in each block
and a linear CTC head. Frame keys can be tapped at three places in the
final block:

- ``ffn_input_before_ln``: the residual stream entering the final
  block's FFN layer norm (``norm_ffn`` input),
- ``ffn_input_after_ln`` (default): the normalized tensor the FFN
  actually consumes (``norm_ffn`` output),
- ``encoder_output``: the stack output after the closing layer norm.

All taps share the model width, so any of them can serve as datastore
keys for the same datastore dimensionality.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .errors import CheckpointError

TAP_POINTS = ("encoder_output", "ffn_input_after_ln", "ffn_input_before_ln")
DEFAULT_TAP = "ffn_input_after_ln"

CKPT_FORMAT = "ctcextract-ckpt"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    tokens: tuple[str, ...]
    blank_id: int = 0
    num_mels: int = 40
    d_model: int = 32
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: int = 64
    sample_rate: int = 16000
    n_fft: int = 400
    hop_length: int = 160

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 2:
            raise CheckpointError("model needs at least blank plus one token")
        if not 0 <= self.blank_id < len(self.tokens):
            raise CheckpointError(f"blank_id {self.blank_id} out of range")
        if self.d_model % self.num_heads != 0:
            raise CheckpointError("d_model must be divisible by num_heads")

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.norm_attn = nn.LayerNorm(d_model)
        self.self_attn = nn.MultiheadAttention(d_model, num_heads, batch_first=True)
        self.norm_ffn = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, ffn_dim),
            nn.ReLU(),
            nn.Linear(ffn_dim, d_model),
        )

    def forward(self, x: torch.Tensor, collect: dict | None = None) -> torch.Tensor:
        h = self.norm_attn(x)
        attn, _ = self.self_attn(h, h, h, need_weights=False)
        x = x + attn
        if collect is not None:
            collect["ffn_input_before_ln"] = x
        h = self.norm_ffn(x)
        if collect is not None:
            collect["ffn_input_after_ln"] = h
        return x + self.ffn(h)


class CtcEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.input_proj = nn.Linear(config.num_mels, config.d_model)
        self.layers = nn.ModuleList(
            EncoderLayer(config.d_model, config.num_heads, config.ffn_dim)
            for _ in range(config.num_layers))
        self.norm_out = nn.LayerNorm(config.d_model)
        self.ctc_head = nn.Linear(config.d_model, config.vocab_size)

    @torch.inference_mode()
    def encode(self, feats: torch.Tensor) -> dict[str, torch.Tensor]:
        """Run one utterance's (T, num_mels) features.

        Returns per-frame tensors: every tap point (T, d_model) plus
        ``posteriors`` (T, vocab), the softmax of the CTC head over the
        encoder output.
        """
        x = self.input_proj(feats.unsqueeze(0))
        taps: dict[str, torch.Tensor] = {}
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x, collect=taps if i == last else None)
        out = self.norm_out(x)
        taps["encoder_output"] = out
        posteriors = torch.softmax(self.ctc_head(out), dim=-1)
        result = {name: t.squeeze(0) for name, t in taps.items()}
        result["posteriors"] = posteriors.squeeze(0)
        return result


def init_model(config: ModelConfig, seed: int = 0) -> CtcEncoder:
    """Fresh model with seeded random weights (a stand-in checkpoint source
    when no trained model is at hand). Returned in eval mode: this adapter
    only ever runs inference, and eval keeps attention bit-reproducible."""
    torch.manual_seed(seed)
    return CtcEncoder(config).eval()


def save_checkpoint(path, model: CtcEncoder) -> None:
    torch.save({
        "format": CKPT_FORMAT,
        "version": CKPT_VERSION,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
    }, path)


def load_checkpoint(path) -> CtcEncoder:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
    if not isinstance(payload, dict) or payload.get("format") != CKPT_FORMAT:
        raise CheckpointError(
            f"{path} is not a {CKPT_FORMAT} checkpoint (missing format marker)")
    if payload.get("version") != CKPT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload.get('version')}")
    try:
        config = ModelConfig(**payload["config"])
        model = CtcEncoder(config)
        model.load_state_dict(payload["state_dict"], strict=True)
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: incompatible checkpoint contents: {exc}")
    model.eval()
    return model
