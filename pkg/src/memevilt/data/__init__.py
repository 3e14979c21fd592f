from .batching import FeatureStore, make_batches, rotated_copies
from .images import augment_rotation, decode_image, preprocess_image, rotate
from .manifest import (
    Corpus,
    MemeRecord,
    apply_consensus,
    consensus_label,
    corpus_stats,
    load_manifest,
    save_manifest,
    write_stats,
)
from .ocr import OcrConfig, ocr_extract, resolve_texts
from .synth import generate_synthetic
from .text import PAD, UNK, TokenizedText, Vocab, build_vocab, tokenize, tokenize_pad

__all__ = [
    "Corpus", "FeatureStore", "MemeRecord", "OcrConfig", "PAD", "TokenizedText", "UNK", "Vocab",
    "apply_consensus", "augment_rotation", "build_vocab", "consensus_label", "corpus_stats",
    "decode_image", "generate_synthetic", "load_manifest", "make_batches", "ocr_extract",
    "preprocess_image", "resolve_texts", "rotate", "rotated_copies", "save_manifest", "tokenize",
    "tokenize_pad", "write_stats",
]
