"""Batch construction and per-record feature caching."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..model import Batch, ViltConfig
from .images import DEFAULT_MAX_DEGREES, decode_image, preprocess_image, rotate
from .manifest import Corpus, MemeRecord
from .text import Vocab, tokenize_pad


def make_batches(records, batch_size: int, shuffle: bool = False, rng=None) -> list:
    """Split records into consecutive groups; the last may be short."""
    records = list(records)
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    if not records:
        raise ValidationError("cannot batch an empty corpus")
    if shuffle:
        if rng is None:
            raise ValidationError("shuffling needs an RngStream")
        order = rng.permutation(len(records))
        records = [records[i] for i in order]
    return [records[i:i + batch_size] for i in range(0, len(records), batch_size)]


def rotated_copies(records, rng, max_deg: float = DEFAULT_MAX_DEGREES) -> list:
    """One extra record per input whose image is rotated by a fixed random angle."""
    out = []
    for rec in records:
        angle = float(rng.derive(rec.id).uniform(-max_deg, max_deg))
        meta = dict(rec.meta or {})
        meta["rotation"] = angle
        out.append(MemeRecord(f"{rec.id}#rot", rec.image_path, rec.text, rec.label, None, meta))
    return out


class FeatureStore:
    """Decoded, resized images and encoded captions, computed once per record.

    Records must already carry their text (see ``resolve_texts``).
    """

    def __init__(self, corpus: Corpus, vocab: Vocab, cfg: ViltConfig):
        self.corpus = corpus
        self.vocab = vocab
        self.cfg = cfg
        self._images = {}
        self._tokens = {}

    def image(self, rec: MemeRecord) -> np.ndarray:
        angle = (rec.meta or {}).get("rotation")
        key = rec.image_path if angle is None else (rec.image_path, angle)
        if key not in self._images:
            if angle is None:
                raw = decode_image(self.corpus.resolve_image(rec))
                self._images[key] = preprocess_image(raw, self.cfg.image_size)
            else:
                base = MemeRecord(rec.id, rec.image_path)
                self._images[key] = rotate(self.image(base), angle)
        return self._images[key]

    def tokens(self, rec: MemeRecord):
        if rec.id not in self._tokens:
            self._tokens[rec.id] = tokenize_pad(rec.text, self.vocab, self.cfg.max_text_len)
        return self._tokens[rec.id]

    def collate(self, records, augment_rng=None, max_deg: float = DEFAULT_MAX_DEGREES,
                with_labels: bool = True) -> Batch:
        """Stack records into a Batch.

        With ``augment_rng`` every image is rotated by an angle drawn from a
        stream derived from the record id, so results do not depend on batch
        composition or order.
        """
        images, ids, masks, labels = [], [], [], []
        for rec in records:
            img = self.image(rec)
            if augment_rng is not None:
                angle = float(augment_rng.derive(rec.id).uniform(-max_deg, max_deg))
                img = rotate(img, angle)
            tok = self.tokens(rec)
            images.append(img)
            ids.append(tok.ids)
            masks.append(tok.mask)
            labels.append(rec.label)
        label_arr = None
        if with_labels:
            if any(lab is None for lab in labels):
                raise ValidationError("batch contains unlabeled records")
            label_arr = np.asarray(labels, dtype=np.float32)
        return Batch(np.stack(images), np.stack(ids), np.stack(masks), label_arr, [r.id for r in records])
