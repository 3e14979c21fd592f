"""Synthetic meme corpora with a known dependence on image and caption.

Every sample may carry an image marker (a bright square in one quadrant) and a
text marker (a trigger word in the caption). In ``xor`` mode the label is
``image_marker XOR text_marker``, so neither modality alone predicts it; in
``easy`` mode the label is the image marker and the caption is a distractor.
The four marker combinations are dealt evenly, which keeps labels balanced.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..rng import RngStream
from .images import write_ppm
from .manifest import Corpus, MemeRecord

MODES = ("xor", "easy")
TRIGGER = "kappa"
FILLER = (
    "when you the monday again cat dog coffee work weekend finally nobody me my friend "
    "says look at this moment every time they why how really best worst day night"
).split()


def _caption(rng: RngStream, with_trigger: bool) -> str:
    n = int(rng.integers(4, 13))
    words = [FILLER[int(i)] for i in rng.integers(0, len(FILLER), size=n)]
    if with_trigger:
        words.insert(int(rng.integers(0, n + 1)), TRIGGER)
    return " ".join(words)


def _image(rng: RngStream, size: int, marker: bool):
    img = rng.integers(0, 64, size=(size, size, 3)).astype(np.uint8)
    quadrant = None
    if marker:
        quadrant = int(rng.integers(0, 4))
        # side 3/8 of the image: always covers at least one whole 16-px patch at size 64
        half, side = size // 2, (3 * size) // 8
        top = (quadrant // 2) * half + int(rng.integers(0, half - side + 1))
        left = (quadrant % 2) * half + int(rng.integers(0, half - side + 1))
        img[top:top + side, left:left + side] = rng.integers(220, 256, size=3).astype(np.uint8)
    return img, quadrant


def generate_synthetic(n: int, mode: str, seed: int, out_dir, image_size: int = 64) -> Corpus:
    """Write ``images/``, OCR sidecars and ``manifest.jsonl`` under ``out_dir``."""
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if n < 4 or n % 2:
        raise ValidationError("n must be an even number >= 4")
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out_dir}: {exc}") from exc
    root = RngStream(seed, 0x73796E7468)
    # dealing order 00, 10, 01, 11 keeps both the xor and the image label balanced when n % 4 == 2
    combos = [(i % 4) & 1 for i in range(n)], [(i % 4) >> 1 for i in range(n)]
    order = root.derive("combos").permutation(n)
    records = []
    for pos, i in enumerate(order):
        img_marker, txt_marker = combos[0][i], combos[1][i]
        rid = f"syn{pos:05d}"
        r = root.derive(rid)
        image, quadrant = _image(r.derive("image"), image_size, bool(img_marker))
        caption = _caption(r.derive("text"), bool(txt_marker))
        label = img_marker ^ txt_marker if mode == "xor" else img_marker
        rel = f"images/{rid}.ppm"
        write_ppm(out_dir / rel, image)
        (out_dir / (rel + ".txt")).write_text(caption, encoding="utf-8")
        meta = {"image_marker": int(img_marker), "text_marker": int(txt_marker), "quadrant": quadrant, "mode": mode}
        records.append(MemeRecord(rid, rel, None, int(label), None, meta))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(r.to_json()) + "\n" for r in records), encoding="utf-8")
    return Corpus(records, source=str(manifest), metadata={"synthetic": mode, "seed": seed})
