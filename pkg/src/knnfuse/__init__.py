"""Retrieval-augmented CTC decoding toolkit.

Builds a frame-level key-value datastore from CTC pseudo labels, retrieves
nearest neighbors per frame at decode time, and interpolates the retrieved
distribution with the CTC posterior before greedy collapse. Includes
skip-blank datastore pruning, an IVF index with a flat-search exactness
reference, error-rate scoring, and a deterministic synthetic corpus
generator for end-to-end verification.
"""

from .datastore import (
    Datastore,
    build_datastore,
    datastore_stats,
    load_datastore,
    pseudo_labels,
    save_datastore,
    serialized_size,
)
from .decoder import (
    DecodeResult,
    FrameDecision,
    FusedCtcDecoder,
    aggregate_counters,
    compute_pknn,
    ctc_collapse,
    decode_corpus,
    decode_utterance,
    fuse,
)
from .errors import (
    CorruptFile,
    DimMismatch,
    DuplicateToken,
    DuplicateUtterance,
    EmptyRetrieval,
    EmptyVocabulary,
    InvalidLogits,
    InvalidPosteriors,
    KnnFuseError,
    TooManyCentroids,
    UndefinedRate,
    UnsupportedFormat,
)
from .frames_io import (
    FramesFileHeader,
    Manifest,
    ManifestEntry,
    read_frames,
    read_frames_all,
    read_manifest,
    write_frames,
    write_manifest,
)
from .index import (
    FlatIndex,
    IvfIndex,
    NeighborSet,
    load_ivf,
    save_ivf,
    search_flat,
    search_ivf,
    train_ivf,
)
from .metrics import ErrorCounts, align_and_count, char_tokens, corpus_error_rate, word_tokens
from .synth import SynthConfig, SynthSummary, class_centers, generate_corpus, synth_vocabulary
from .vocab import (
    FusionConfig,
    UtteranceFrames,
    Vocabulary,
    load_vocabulary,
    normalize_posteriors,
    save_vocabulary,
)

__version__ = "0.1.0"
