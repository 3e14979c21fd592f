import json
import logging
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from memevilt.data import (
    PAD,
    UNK,
    Corpus,
    FeatureStore,
    MemeRecord,
    OcrConfig,
    apply_consensus,
    augment_rotation,
    build_vocab,
    consensus_label,
    corpus_stats,
    decode_image,
    generate_synthetic,
    load_manifest,
    make_batches,
    ocr_extract,
    preprocess_image,
    resolve_texts,
    rotate,
    rotated_copies,
    save_manifest,
    tokenize,
    tokenize_pad,
    write_stats,
)
from memevilt.data.images import write_ppm
from memevilt.errors import ImageError, ManifestError, OcrError, ValidationError
from memevilt.model import profile_config
from memevilt.rng import RngStream


def write_lines(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows))
    return path


# manifest

def test_fixture_manifest_counts(mimic_manifest):
    corpus = load_manifest(mimic_manifest)
    assert len(corpus) == 953
    assert corpus_stats(corpus)["counts"] == {0: 545, 1: 408}


def test_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    with pytest.raises(ManifestError, match="no records"):
        load_manifest(tmp_path / "m.jsonl")


def test_bad_label_names_line(tmp_path):
    path = write_lines(tmp_path / "m.jsonl", [{"id": "a", "image_path": "a.png", "label": 1},
                                              {"id": "b", "image_path": "b.png", "label": 2}])
    with pytest.raises(ManifestError, match="line 2"):
        load_manifest(path)


@pytest.mark.parametrize("rows", [
    ['{"id": "a", "image_path": "a.png"', ],
    [{"id": "a", "image_path": "a.png"}, {"id": "a", "image_path": "b.png"}],
    [{"id": "a", "image_path": "a.png", "colour": "red"}],
    [{"id": "a"}],
])
def test_schema_errors(tmp_path, rows):
    with pytest.raises(ManifestError):
        load_manifest(write_lines(tmp_path / "m.jsonl", rows))


def test_missing_text_flagged(tmp_path):
    path = write_lines(tmp_path / "m.jsonl", [{"id": "a", "image_path": "a.png", "text": "hi"},
                                              {"id": "b", "image_path": "b.png"}])
    assert load_manifest(path).needs_ocr() == ["b"]


def test_manifest_round_trip(tmp_path, mimic_manifest):
    corpus = load_manifest(mimic_manifest)
    save_manifest(corpus, tmp_path / "copy.jsonl")
    again = load_manifest(tmp_path / "copy.jsonl")
    assert again == corpus and again.ids == corpus.ids


# OCR

def test_sidecar_passthrough(tmp_path):
    (tmp_path / "a.png.txt").write_text("HELLO WORLD")
    rec = MemeRecord("a", "a.png")
    assert ocr_extract(rec, OcrConfig("sidecar"), tmp_path) == "HELLO WORLD"


def test_none_adapter_identity():
    rec = MemeRecord("a", "a.png", text="already here")
    assert ocr_extract(rec, OcrConfig("none")) == "already here"


def test_missing_sidecar_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        assert ocr_extract(MemeRecord("a", "a.png"), OcrConfig("sidecar"), tmp_path) == ""
    assert len([r for r in caplog.records if r.levelno == logging.WARNING]) == 1


def test_command_adapter(tmp_path):
    ok = OcrConfig("command", (sys.executable, "-c", "import sys; print('text of', sys.argv[1][-5:])"))
    assert ocr_extract(MemeRecord("a", "a.png"), ok, tmp_path) == "text of a.png"
    bad = OcrConfig("command", (sys.executable, "-c", "import sys; sys.stderr.write('boom'); sys.exit(3)"))
    with pytest.raises(OcrError, match="boom"):
        ocr_extract(MemeRecord("a", "a.png"), bad, tmp_path)


def test_resolve_texts_fills_only_missing(tmp_path):
    (tmp_path / "b.png.txt").write_text("from ocr")
    corpus = Corpus([MemeRecord("a", "a.png", "kept"), MemeRecord("b", "b.png")], source=str(tmp_path / "m.jsonl"))
    out = resolve_texts(corpus, OcrConfig("sidecar"))
    assert [r.text for r in out] == ["kept", "from ocr"]


# vocabulary and padding

def test_build_vocab_examples():
    v = build_vocab(["a b", "a"], 1)
    assert v.itos == ["[PAD]", "[UNK]", "a", "b"]
    assert v["a"] == 2 and v["b"] == 3 and v["zzz"] == UNK
    assert len(build_vocab(["a b", "a"], 3)) == 2
    assert build_vocab(["a b", "a"], 1) == v


def test_tokenize_splits_punctuation():
    assert tokenize("Hello, WORLD!") == ["hello", ",", "world", "!"]


def test_tokenize_pad_examples():
    vocab = build_vocab(["if you ever feel stupid"])
    empty = tokenize_pad("", vocab)
    assert (empty.ids == PAD).all() and (empty.mask == 0).all()
    five = tokenize_pad("If you ever feel stupid", vocab)
    assert (five.ids[:5] != PAD).all() and (five.ids[5:] == PAD).all()
    np.testing.assert_array_equal(five.mask, [1] * 5 + [0] * 35)
    long = tokenize_pad(" ".join(f"w{i}" for i in range(45)), vocab)
    assert long.ids.shape == (40,) and (long.mask == 1).all() and (long.ids == UNK).all()


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=400))
def test_tokenize_pad_length_property(text):
    tok = tokenize_pad(text, build_vocab(["a b c"]))
    assert tok.ids.shape == (40,) and tok.mask.shape == (40,)
    n = int(tok.mask.sum())
    assert (tok.mask[:n] == 1).all() and (tok.ids[n:] == PAD).all()


# images

def test_constant_gray_any_size():
    raw = np.full((37, 53, 3), 128, dtype=np.uint8)
    out = preprocess_image(raw, (64, 64))
    assert out.shape == (64, 64, 3)
    np.testing.assert_allclose(out, (128 / 255 - 0.5) / 0.5, atol=1e-6)


def test_endpoints_and_identity_resize():
    raw = np.zeros((4, 4, 3), dtype=np.uint8)
    raw[0, 0] = 255
    out = preprocess_image(raw, (4, 4))
    assert out[0, 0, 0] == 1.0 and out[1, 1, 0] == -1.0
    np.testing.assert_allclose(out, (raw / 255 - 0.5) / 0.5, atol=1e-7)


def test_grayscale_replicated(tmp_path):
    Image.fromarray(np.arange(64, dtype=np.uint8).reshape(8, 8), mode="L").save(tmp_path / "g.png")
    img = decode_image(tmp_path / "g.png")
    assert img.shape == (8, 8, 3)
    assert (img[..., 0] == img[..., 2]).all()


@pytest.mark.parametrize("ext", ["png", "jpg", "ppm"])
def test_codecs(tmp_path, ext):
    arr = np.full((6, 5, 3), 200, dtype=np.uint8)
    if ext == "ppm":
        write_ppm(tmp_path / f"x.{ext}", arr)
    else:
        Image.fromarray(arr).save(tmp_path / f"x.{ext}")
    img = decode_image(tmp_path / f"x.{ext}")
    assert img.shape == (6, 5, 3)
    assert abs(int(img[2, 2, 0]) - 200) <= 2


def test_undecodable_image(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(ImageError, match="bad.png"):
        decode_image(tmp_path / "bad.png")


def test_rotation_examples():
    img = np.random.default_rng(0).uniform(-1, 1, size=(7, 9, 3))
    np.testing.assert_array_equal(rotate(img, 0), img)
    np.testing.assert_array_equal(rotate(img, 180), img[::-1, ::-1])
    np.testing.assert_array_equal(rotate(rotate(img, 180), 180), img)
    a = augment_rotation(img, RngStream(3))
    np.testing.assert_array_equal(a, augment_rotation(img, RngStream(3)))


def test_rotation_fills_corners_black():
    out = rotate(np.ones((16, 16, 3)), 45)
    assert out[0, 0, 0] == -1.0
    assert out[8, 8, 0] == pytest.approx(1.0)


# batching

def test_make_batches_953(mimic_manifest):
    corpus = load_manifest(mimic_manifest)
    batches = make_batches(corpus.records, 16)
    assert len(batches) == 60 and [len(b) for b in batches[:59]] == [16] * 59 and len(batches[-1]) == 9
    assert [r.id for r in batches[0]] == corpus.ids[:16]
    s1 = make_batches(corpus.records, 16, shuffle=True, rng=RngStream(1))
    s2 = make_batches(corpus.records, 16, shuffle=True, rng=RngStream(1))
    assert [[r.id for r in b] for b in s1] == [[r.id for r in b] for b in s2]
    assert sorted(r.id for b in s1 for r in b) == sorted(corpus.ids)


def test_make_batches_errors():
    with pytest.raises(ValidationError):
        make_batches([], 4)
    with pytest.raises(ValidationError):
        make_batches([MemeRecord("a", "a")], 0)


def test_augmentation_independent_of_batch_order(tmp_path):
    corpus = resolve_texts(generate_synthetic(8, "easy", 0, tmp_path), OcrConfig("sidecar"))
    cfg = profile_config("desk", vocab_size=100)
    store = FeatureStore(corpus, build_vocab(r.text for r in corpus), cfg)
    recs = corpus.records
    a = store.collate(recs[:4], RngStream(5).derive("augment", 1))
    b = store.collate(recs[3::-1], RngStream(5).derive("augment", 1))
    np.testing.assert_array_equal(a.images, b.images[::-1])
    np.testing.assert_array_equal(a.labels, [r.label for r in recs[:4]])


def test_offline_copies_keep_labels():
    recs = [MemeRecord(f"r{i}", "x.png", "t", i % 2) for i in range(6)]
    copies = rotated_copies(recs, RngStream(0))
    assert [c.label for c in copies] == [r.label for r in recs]
    assert all(abs(c.meta["rotation"]) <= 15 for c in copies)


# consensus and stats

def test_consensus_examples():
    assert consensus_label([1, 1, 1, 1, 0]) == 1
    assert consensus_label([0, 0, 0]) == 0
    assert consensus_label([1, 1, 0]) is None
    assert consensus_label([1, 0]) is None
    with pytest.raises(ValidationError):
        consensus_label([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=12), st.randoms())
def test_consensus_permutation_invariant(votes, rnd):
    shuffled = list(votes)
    rnd.shuffle(shuffled)
    assert consensus_label(votes) == consensus_label(shuffled)


def test_apply_consensus_lists_unresolved():
    corpus = Corpus([MemeRecord("a", "a", annotator_labels=[1, 1, 1, 1, 0]),
                     MemeRecord("b", "b", annotator_labels=[1, 1, 0]),
                     MemeRecord("c", "c", label=0)])
    resolved, unresolved = apply_consensus(corpus)
    assert [r.label for r in resolved] == [1, None, 0] and unresolved == ["b"]


def test_stats_degenerate(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        stats = corpus_stats(Corpus([MemeRecord("a", "a", "x")]))
    assert stats["counts"] == {0: 0, 1: 0} and caplog.records
    single = corpus_stats(Corpus([MemeRecord("a", "a", "x y", 1)]))
    assert single["counts"] == {0: 0, 1: 1} and single["fractions"][1] == 1.0
    json_path, csv_path = write_stats(single, tmp_path)
    assert json.loads(json_path.read_text())["counts"] == {"0": 0, "1": 1}
    assert csv_path.read_text().splitlines()[0] == "kind,bin,count"


# synthetic corpus

def test_synthetic_xor(tmp_path):
    corpus = generate_synthetic(100, "xor", 7, tmp_path)
    assert len(corpus) == 100
    assert 49 <= sum(corpus.labels) <= 51
    for r in corpus:
        assert r.label == r.meta["image_marker"] ^ r.meta["text_marker"]
        assert ("kappa" in (tmp_path / (r.image_path + ".txt")).read_text().split()) == bool(r.meta["text_marker"])


@pytest.mark.parametrize("n", [4, 6, 10, 22])
def test_synthetic_balance(tmp_path, n):
    for mode in ("xor", "easy"):
        corpus = generate_synthetic(n, mode, 1, tmp_path / f"{mode}{n}")
        assert abs(2 * sum(corpus.labels) - n) <= 2


def test_synthetic_deterministic(tmp_path):
    generate_synthetic(20, "xor", 3, tmp_path / "a")
    generate_synthetic(20, "xor", 3, tmp_path / "b")
    assert (tmp_path / "a/manifest.jsonl").read_bytes() == (tmp_path / "b/manifest.jsonl").read_bytes()
    for f in (tmp_path / "a/images").iterdir():
        assert f.read_bytes() == (tmp_path / "b/images" / f.name).read_bytes()


@pytest.mark.parametrize("n", [3, 7])
def test_synthetic_rejects_bad_n(tmp_path, n):
    with pytest.raises(ValidationError):
        generate_synthetic(n, "xor", 0, tmp_path)
