"""BIO tag algebra, box geometry, and corpus readers."""

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spanner.data import (
    NON_ENTITY,
    BioTag,
    BoundingBox,
    CorpusError,
    Dataset,
    GroundingAnnotation,
    Span,
    decode_bio,
    encode_bio,
    iou,
    read_conll,
    read_multimodal_jsonl,
    write_conll,
)
from spanner.errors import BioSequenceError

DATA = Path(__file__).parent / "data"

TYPES = ("PER", "LOC", "ORG", "MISC")


def tag(text):
    return BioTag.parse(text)


def tags(*texts):
    return [BioTag.parse(t) for t in texts]


# ---------------------------------------------------------------------------
# BioTag basics
# ---------------------------------------------------------------------------


def test_tag_parse_and_format_round_trip():
    for text in ("O", "B-PER", "I-LOC", "B-MISC"):
        assert str(BioTag.parse(text)) == text


def test_tag_parse_rejects_garbage():
    for bad in ("", "B", "B-", "X-PER", "BPER", "o"):
        with pytest.raises(CorpusError):
            BioTag.parse(bad)


def test_o_tag_carries_no_type():
    with pytest.raises(CorpusError):
        BioTag("O", "PER")
    with pytest.raises(CorpusError):
        BioTag("B", None)


# ---------------------------------------------------------------------------
# decode_bio / encode_bio
# ---------------------------------------------------------------------------


def test_decode_simple_sentence():
    spans = decode_bio(tags("B-PER", "I-PER", "O", "B-LOC"))
    assert [(s.start, s.end, s.entity_type) for s in spans] == [
        (0, 2, "PER"),
        (3, 4, "LOC"),
    ]


def test_decode_all_outside():
    assert decode_bio(tags("O", "O", "O")) == []


def test_decode_rejects_stray_inside_without_repair():
    with pytest.raises(BioSequenceError):
        decode_bio(tags("O", "I-PER"))
    with pytest.raises(BioSequenceError):
        decode_bio(tags("B-LOC", "I-PER"))


def test_repair_starts_new_span_at_stray_inside():
    # IOB2 repair: stray I-X opens a span
    spans = decode_bio(tags("I-PER", "I-PER", "O", "B-LOC", "I-PER"), repair=True)
    assert [(s.start, s.end, s.entity_type) for s in spans] == [
        (0, 2, "PER"),
        (3, 4, "LOC"),
        (4, 5, "PER"),
    ]


def test_decode_fills_surfaces_from_tokens():
    spans = decode_bio(tags("B-PER", "I-PER", "O"), tokens=["Ada", "Lovelace", "wrote"])
    assert spans[0].surface == "Ada Lovelace"


def test_encode_simple():
    out = encode_bio([Span(0, 2, "PER")], 3)
    assert [str(t) for t in out] == ["B-PER", "I-PER", "O"]


def test_encode_empty():
    assert [str(t) for t in encode_bio([], 2)] == ["O", "O"]


def test_encode_rejects_overlap():
    with pytest.raises(CorpusError):
        encode_bio([Span(0, 2, "PER"), Span(1, 3, "LOC")], 4)


def _random_span_set(rng, length):
    spans = []
    cursor = 0
    while cursor < length:
        start = cursor + int(rng.integers(0, 3))
        width = int(rng.integers(1, 4))
        if start + width > length:
            break
        spans.append(Span(start, start + width, TYPES[int(rng.integers(4))]))
        cursor = start + width
    return spans


def reference_decode(tag_list, repair):
    """Quadratic oracle: enumerate all (start, end) pairs and keep the
    maximal runs the repair rule admits."""
    n = len(tag_list)
    spans = []
    for start in range(n):
        t = tag_list[start]
        if t.kind == "O":
            continue
        starts_here = t.kind == "B" or (
            t.kind == "I"
            and (
                start == 0
                or tag_list[start - 1].kind == "O"
                or tag_list[start - 1].entity_type != t.entity_type
            )
        )
        if t.kind == "I" and not repair and starts_here:
            raise BioSequenceError("ill-formed")
        if not starts_here:
            continue
        end = start + 1
        while (
            end < n
            and tag_list[end].kind == "I"
            and tag_list[end].entity_type == t.entity_type
        ):
            end += 1
        spans.append((start, end, t.entity_type))
    return sorted(spans)


def test_round_trip_10000_random_span_sets():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        length = int(rng.integers(1, 13))
        spans = _random_span_set(rng, length)
        decoded = decode_bio(encode_bio(spans, length))
        assert [(s.start, s.end, s.entity_type) for s in decoded] == [
            (s.start, s.end, s.entity_type) for s in spans
        ]


def test_decode_matches_reference_on_10000_random_sequences():
    rng = np.random.default_rng(13)
    alphabet = ["O"] + [f"{k}-{t}" for t in TYPES for k in "BI"]
    for _ in range(10_000):
        length = int(rng.integers(1, 13))
        tag_list = tags(*(alphabet[int(rng.integers(len(alphabet)))] for _ in range(length)))
        got = [(s.start, s.end, s.entity_type) for s in decode_bio(tag_list, repair=True)]
        assert sorted(got) == reference_decode(tag_list, repair=True)


def test_decoded_spans_sorted_and_disjoint():
    rng = np.random.default_rng(17)
    alphabet = ["O"] + [f"{k}-{t}" for t in TYPES for k in "BI"]
    for _ in range(2_000):
        length = int(rng.integers(1, 15))
        tag_list = tags(*(alphabet[int(rng.integers(len(alphabet)))] for _ in range(length)))
        spans = decode_bio(tag_list, repair=True)
        for a, b in zip(spans, spans[1:]):
            assert a.end <= b.start


# ---------------------------------------------------------------------------
# bounding boxes
# ---------------------------------------------------------------------------


def test_iou_identity():
    box = BoundingBox(0, 0, 10, 10)
    assert iou(box, box) == 1.0


def test_iou_disjoint():
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) == 0.0


def test_iou_quarter_overlap():
    value = iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 15, 15))
    assert abs(value - 25 / 175) < 1e-12


def test_box_invariants_enforced():
    with pytest.raises(CorpusError):
        BoundingBox(5, 0, 5, 10)
    with pytest.raises(CorpusError):
        BoundingBox(-1, 0, 5, 10)


@given(st.lists(st.floats(0, 100), min_size=8, max_size=8))
@settings(max_examples=200, deadline=None)
def test_iou_symmetric_and_bounded(values):
    def mk(v):
        x1, y1, w, h = v
        return BoundingBox(x1, y1, x1 + w + 0.5, y1 + h + 0.5)

    a, b = mk(values[:4]), mk(values[4:])
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


def test_grounding_annotation_consistency():
    assert GroundingAnnotation.from_boxes(None).groundable is False
    with pytest.raises(CorpusError):
        GroundingAnnotation(boxes=(), groundable=True)


# ---------------------------------------------------------------------------
# CoNLL reader
# ---------------------------------------------------------------------------

# hand-decoded from tests/data/mini.conll, written before the reader
MINI_EXPECTED = [
    [(0, 1, "ORG"), (2, 3, "MISC")],
    [(0, 2, "PER")],
    [(0, 2, "LOC")],
    [(1, 3, "ORG"), (9, 11, "MISC")],
    [(1, 2, "LOC"), (3, 4, "LOC"), (5, 6, "PER")],
    [(1, 2, "PER")],
    [(0, 1, "LOC"), (2, 3, "LOC")],
    [(0, 1, "LOC"), (5, 6, "LOC")],
    [(0, 1, "ORG")],
    [(0, 2, "PER"), (3, 4, "LOC"), (6, 8, "PER")],
]


def test_read_conll_two_line_file(tmp_path):
    path = tmp_path / "two.txt"
    path.write_text("EU B-ORG\nrejects O\n")
    data = read_conll(path)
    assert len(data.sentences) == 1
    spans = data.sentences[0].gold_spans()
    assert [(s.start, s.end, s.entity_type) for s in spans] == [(0, 1, "ORG")]


def test_read_conll_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    assert read_conll(path).sentences == ()


def test_read_conll_mini_fixture_matches_hand_decoding():
    data = read_conll(DATA / "mini.conll")
    assert len(data.sentences) == len(MINI_EXPECTED)
    got = [
        [(s.start, s.end, s.entity_type) for s in sentence.gold_spans()]
        for sentence in data.sentences
    ]
    assert got == MINI_EXPECTED
    assert data.entity_types == ("LOC", "MISC", "ORG", "PER")


def test_read_conll_reports_line_number_on_bad_tag(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("EU B-ORG\nrejects Q-FOO\n")
    with pytest.raises(CorpusError, match=r"bad\.txt:2"):
        read_conll(path)


def test_read_conll_rejects_stray_inside_unless_repaired(tmp_path):
    path = tmp_path / "stray.txt"
    path.write_text("word O\nother I-PER\n")
    with pytest.raises(CorpusError):
        read_conll(path)
    data = read_conll(path, repair=True)
    assert len(data.sentences) == 1


def test_read_conll_merge_dev(tmp_path):
    (tmp_path / "x.train.txt").write_text("EU B-ORG\n\nParis B-LOC\n")
    (tmp_path / "x.dev.txt").write_text("Berlin B-LOC\n")
    merged = read_conll(tmp_path / "x.train.txt", merge_dev=True)
    assert len(merged.sentences) == 3
    alone = read_conll(tmp_path / "x.train.txt", merge_dev=False)
    assert len(alone.sentences) == 2


def test_conll_round_trip_preserves_tokens_and_tags(tmp_path):
    data = read_conll(DATA / "mini.conll")
    out = tmp_path / "roundtrip.txt"
    write_conll(data, out)
    again = read_conll(out)
    for a, b in zip(data.sentences, again.sentences):
        assert a.tokens == b.tokens
        assert [str(t) for t in a.tags] == [str(t) for t in b.tags]


# ---------------------------------------------------------------------------
# multimodal JSONL reader
# ---------------------------------------------------------------------------


def _count_spans_independently(path):
    """Standalone count over the raw file: own JSON walk, own BIO loop."""
    counts = {}
    for line in Path(path).read_text().splitlines():
        record = json.loads(line)
        current = None
        for raw in record["tags"] + ["O"]:
            kind = raw[0]
            entity_type = raw[2:] if kind != "O" else None
            if current and (kind in ("B", "O") or entity_type != current):
                counts[current] = counts.get(current, 0) + 1
                current = None
            if kind == "B":
                current = entity_type
    return counts


def test_multimodal_fixture_span_counts_match_independent_script():
    path = DATA / "multimodal_50.jsonl"
    data = read_multimodal_jsonl(path)
    assert len(data.sentences) == 50
    got = {}
    for sentence in data.sentences:
        for span in sentence.gold_spans():
            got[span.entity_type] = got.get(span.entity_type, 0) + 1
    assert got == _count_spans_independently(path)


def test_multimodal_objects_and_grounding(tmp_path):
    record = {
        "id": "t1",
        "tokens": ["mr", "Kroger", "spoke"],
        "tags": ["O", "B-ORG", "O"],
        "caption": "a store",
        "objects": [
            {"class": "logo", "caption": "a red sign", "box": [0, 0, 5, 5], "sim": {"Kroger": 0.9}},
            {"class": "person", "caption": "a clerk", "box": [10, 0, 15, 5], "sim": None},
        ],
        "grounding": {"0": [[0, 0, 5, 5]]},
    }
    path = tmp_path / "one.jsonl"
    path.write_text(json.dumps(record) + "\n")
    data = read_multimodal_jsonl(path)
    sentence = data.sentences[0]
    assert len(sentence.objects) == 2
    assert sentence.objects[0].similarity == {"Kroger": 0.9}
    assert sentence.grounding[0].groundable
    assert sentence.grounding[0].boxes[0] == BoundingBox(0, 0, 5, 5)


def test_multimodal_null_grounding_means_ungroundable(tmp_path):
    record = {
        "id": "t1",
        "tokens": ["Kroger"],
        "tags": ["B-ORG"],
        "caption": None,
        "objects": [],
        "grounding": {"0": None},
    }
    path = tmp_path / "one.jsonl"
    path.write_text(json.dumps(record) + "\n")
    sentence = read_multimodal_jsonl(path).sentences[0]
    assert sentence.grounding[0].groundable is False
    assert sentence.grounding[0].boxes == ()


def test_multimodal_schema_violation_names_line_and_field(tmp_path):
    record = {"id": "t1", "tokens": ["a"], "tags": ["O", "O"]}
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(CorpusError, match=r"bad\.jsonl:1.*tags"):
        read_multimodal_jsonl(path)


def test_multimodal_bad_box_rejected(tmp_path):
    record = {
        "id": "t1",
        "tokens": ["a"],
        "tags": ["O"],
        "caption": None,
        "objects": [{"class": "x", "caption": "", "box": [5, 0, 5, 5], "sim": None}],
        "grounding": {},
    }
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(CorpusError, match="objects"):
        read_multimodal_jsonl(path)


def test_non_entity_reserved_name_not_a_gold_type():
    data = read_conll(DATA / "mini.conll")
    assert NON_ENTITY not in data.entity_types
