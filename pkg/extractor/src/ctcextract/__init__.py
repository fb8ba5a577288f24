"""Acoustic-model adapter: runs a CTC encoder checkpoint over audio and
writes per-frame embedding/posterior files for retrieval-augmented
decoding. Owns all model-framework dependencies so the decoding toolkit
stays free of them."""

from .errors import AudioError, CheckpointError, DatasetError, ExtractorError
from .extract import ExtractSummary, extract, read_text_file, read_wav_scp
from .features import log_mel, mel_filterbank, read_wav
from .model import (
    DEFAULT_TAP,
    TAP_POINTS,
    CtcEncoder,
    ModelConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .writer import FramesWriter

__version__ = "0.1.0"
