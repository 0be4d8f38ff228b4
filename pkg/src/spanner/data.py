"""Domain types, corpus readers, bounding-box geometry, and the BIO tag algebra.

Everything here is immutable after construction and safe to share across
threads. Readers are pure functions from files to :class:`Dataset`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import BioSequenceError, CorpusError

# Reserved class absorbing false span candidates in stage 2. Never appears in
# gold annotations.
NON_ENTITY = "NON_ENTITY"


@dataclass(frozen=True)
class BioTag:
    """One per-token tag: O, or B/I carrying an entity type."""

    kind: str  # "B", "I", or "O"
    entity_type: str | None = None

    def __post_init__(self):
        if self.kind not in ("B", "I", "O"):
            raise CorpusError(f"bad BIO kind {self.kind!r}")
        if self.kind == "O" and self.entity_type is not None:
            raise CorpusError("O tag cannot carry an entity type")
        if self.kind in ("B", "I") and not self.entity_type:
            raise CorpusError(f"{self.kind} tag requires an entity type")

    @classmethod
    def parse(cls, text: str) -> "BioTag":
        if text == "O":
            return cls("O")
        if len(text) > 2 and text[1] == "-" and text[0] in ("B", "I"):
            return cls(text[0], text[2:])
        raise CorpusError(f"malformed tag string {text!r}")

    def __str__(self) -> str:
        return "O" if self.kind == "O" else f"{self.kind}-{self.entity_type}"


O_TAG = BioTag("O")


@dataclass(frozen=True)
class Span:
    """A contiguous token span [start, end) with an optional entity type.

    ``entity_type`` is None for stage-1 candidates, whose type is decided
    later. ``surface`` is the covered tokens joined by single spaces; empty
    when the producing context had no token text.
    """

    start: int
    end: int
    entity_type: str | None = None
    surface: str = ""

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise CorpusError(f"bad span bounds [{self.start}, {self.end})")

    def key(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0 <= self.x1 < self.x2 and 0 <= self.y1 < self.y2):
            raise CorpusError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when they do not overlap."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


@dataclass(frozen=True)
class GroundingAnnotation:
    """Gold image regions for one entity; ungroundable entities have none."""

    boxes: tuple[BoundingBox, ...]
    groundable: bool

    def __post_init__(self):
        if self.groundable != bool(self.boxes):
            raise CorpusError("groundable flag must match presence of boxes")

    @classmethod
    def from_boxes(cls, boxes: Iterable[BoundingBox] | None) -> "GroundingAnnotation":
        boxes = tuple(boxes) if boxes else ()
        return cls(boxes=boxes, groundable=bool(boxes))


UNGROUNDABLE = GroundingAnnotation.from_boxes(None)


@dataclass(frozen=True)
class ObjectDetail:
    """One detected object: class name, region caption, box, and optional
    precomputed similarity scores keyed by candidate surface."""

    class_name: str
    region_caption: str
    box: BoundingBox
    similarity: Mapping[str, float] | None = None

    def __post_init__(self):
        if not self.class_name:
            raise CorpusError("object class_name must be non-empty")


@dataclass(frozen=True)
class TaggedSentence:
    id: str
    tokens: tuple[str, ...]
    tags: tuple[BioTag, ...]
    image_caption: str | None = None
    objects: tuple[ObjectDetail, ...] = ()
    grounding: Mapping[int, GroundingAnnotation] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise CorpusError(
                f"sentence {self.id}: {len(self.tokens)} tokens vs {len(self.tags)} tags"
            )

    def text(self) -> str:
        return " ".join(self.tokens)

    def surface(self, start: int, end: int) -> str:
        return " ".join(self.tokens[start:end])

    def gold_spans(self) -> list[Span]:
        """Entity spans decoded from the gold tags, sorted by start."""
        return decode_bio(self.tags, repair=False, tokens=self.tokens)


@dataclass(frozen=True)
class Dataset:
    name: str
    sentences: tuple[TaggedSentence, ...]
    entity_types: tuple[str, ...]
    split: str = "train"

    def by_id(self) -> dict[str, TaggedSentence]:
        return {s.id: s for s in self.sentences}


def _well_formed_violation(tags: Iterable[BioTag]) -> int | None:
    """Index of the first I tag with no valid attachment, or None."""
    prev: BioTag = O_TAG
    for i, tag in enumerate(tags):
        if tag.kind == "I":
            if prev.kind == "O" or prev.entity_type != tag.entity_type:
                return i
        prev = tag
    return None


def decode_bio(
    tags: Iterable[BioTag],
    repair: bool = False,
    tokens: Iterable[str] | None = None,
) -> list[Span]:
    """Decode a BIO sequence into maximal entity spans, sorted by start.

    With ``repair`` a stray I-X (after O, or after a span of a different
    type) begins a new span; without it the sequence must be well-formed.
    Surfaces are filled only when ``tokens`` is given.
    """
    tags = tuple(tags)
    if not repair:
        bad = _well_formed_violation(tags)
        if bad is not None:
            raise BioSequenceError(
                f"I-{tags[bad].entity_type} at position {bad} has no span to continue"
            )
    tokens = tuple(tokens) if tokens is not None else None

    spans: list[Span] = []
    start = None
    current_type = None

    def flush(end: int):
        nonlocal start
        if start is not None:
            surface = " ".join(tokens[start:end]) if tokens else ""
            spans.append(Span(start, end, current_type, surface))
            start = None

    for i, tag in enumerate(tags):
        if tag.kind == "B":
            flush(i)
            start, current_type = i, tag.entity_type
        elif tag.kind == "I":
            if start is not None and tag.entity_type == current_type:
                continue  # extends the open span
            flush(i)  # repair: stray I opens a new span
            start, current_type = i, tag.entity_type
        else:
            flush(i)
    flush(len(tags))
    return spans


def encode_bio(spans: Iterable[Span], length: int) -> list[BioTag]:
    """Inverse of decode_bio for non-overlapping spans within [0, length)."""
    tags: list[BioTag] = [O_TAG] * length
    occupied = [False] * length
    for span in sorted(spans, key=Span.key):
        if span.end > length:
            raise CorpusError(f"span {span.key()} exceeds length {length}")
        if any(occupied[span.start : span.end]):
            raise CorpusError(f"overlapping span at {span.key()}")
        for i in range(span.start, span.end):
            occupied[i] = True
        tags[span.start] = BioTag("B", span.entity_type)
        for i in range(span.start + 1, span.end):
            tags[i] = BioTag("I", span.entity_type)
    return tags


def _entity_types_of(sentences: Iterable[TaggedSentence]) -> tuple[str, ...]:
    types = {t.entity_type for s in sentences for t in s.tags if t.entity_type}
    return tuple(sorted(types))


def _validate_gold_tags(sentence_id: str, tags: list[BioTag], repair: bool, where: str):
    bad = _well_formed_violation(tags)
    if bad is not None and not repair:
        raise CorpusError(
            f"{where}: sentence {sentence_id!r} has I tag without a span at token {bad}"
            " (pass repair to accept)"
        )


def read_conll(path: str | Path, merge_dev: bool = False, repair: bool = False) -> Dataset:
    """Read a CoNLL-format column file: last column is the BIO tag, blank
    lines separate sentences, ``-DOCSTART-`` lines are skipped.

    With ``merge_dev`` a sibling dev file (train->dev / train->valid in the
    file name, or dev.txt / valid.txt next to it) is appended when present.
    """
    path = Path(path)
    sentences = list(_iter_conll_sentences(path, repair))
    if merge_dev:
        sibling = _find_dev_sibling(path)
        if sibling is not None:
            sentences.extend(_iter_conll_sentences(sibling, repair))
    sentences = tuple(sentences)
    return Dataset(
        name=path.stem,
        sentences=sentences,
        entity_types=_entity_types_of(sentences),
        split="train",
    )


def _find_dev_sibling(train_path: Path) -> Path | None:
    candidates = []
    if "train" in train_path.name:
        candidates.append(train_path.with_name(train_path.name.replace("train", "dev")))
        candidates.append(train_path.with_name(train_path.name.replace("train", "valid")))
    candidates.append(train_path.with_name("dev.txt"))
    candidates.append(train_path.with_name("valid.txt"))
    for c in candidates:
        if c != train_path and c.exists():
            return c
    return None


def _iter_conll_sentences(path: Path, repair: bool):
    tokens: list[str] = []
    tags: list[BioTag] = []
    index = 0

    def build():
        nonlocal index
        sid = f"{path.stem}-{index:05d}"
        _validate_gold_tags(sid, tags, repair, str(path))
        sentence = TaggedSentence(id=sid, tokens=tuple(tokens), tags=tuple(tags))
        index += 1
        return sentence

    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                if tokens:
                    yield build()
                    tokens, tags = [], []
                continue
            if stripped.startswith("-DOCSTART-"):
                continue
            columns = stripped.split()
            if len(columns) < 2:
                raise CorpusError(f"{path}:{lineno}: expected token and tag columns")
            try:
                tag = BioTag.parse(columns[-1])
            except CorpusError as err:
                raise CorpusError(f"{path}:{lineno}: {err}") from None
            tokens.append(columns[0])
            tags.append(tag)
    if tokens:
        yield build()


def write_conll(dataset: Dataset, path: str | Path):
    """Serialize token/tag content, one ``token TAG`` line per token."""
    with open(path, "w", encoding="utf-8") as handle:
        for sentence in dataset.sentences:
            for token, tag in zip(sentence.tokens, sentence.tags):
                handle.write(f"{token} {tag}\n")
            handle.write("\n")


def _parse_box(raw, where: str) -> BoundingBox:
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        raise CorpusError(f"{where}: box must be [x1, y1, x2, y2]")
    try:
        return BoundingBox(*(float(v) for v in raw))
    except CorpusError as err:
        raise CorpusError(f"{where}: {err}") from None


def read_multimodal_jsonl(path: str | Path, repair: bool = False) -> Dataset:
    """Read the one-object-per-line multimodal corpus format.

    Schema per line: ``{"id", "tokens", "tags", "caption", "objects",
    "grounding"}`` where objects carry class/caption/box/sim and grounding
    maps gold-span index to a box list or null (ungroundable).
    """
    path = Path(path)
    sentences = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusError(f"{where}: invalid JSON ({err})") from None
            sentences.append(_sentence_from_record(record, where, repair))
    sentences = tuple(sentences)
    return Dataset(
        name=path.stem,
        sentences=sentences,
        entity_types=_entity_types_of(sentences),
        split="train",
    )


def _sentence_from_record(record: dict, where: str, repair: bool) -> TaggedSentence:
    for field_name in ("id", "tokens", "tags"):
        if field_name not in record:
            raise CorpusError(f"{where}: missing field {field_name!r}")
    sid = record["id"]
    tokens = [str(t) for t in record["tokens"]]
    try:
        tags = [BioTag.parse(t) for t in record["tags"]]
    except CorpusError as err:
        raise CorpusError(f"{where}: field 'tags': {err}") from None
    if len(tags) != len(tokens):
        raise CorpusError(f"{where}: field 'tags': length differs from tokens")
    _validate_gold_tags(sid, tags, repair, where)

    objects = []
    for k, raw in enumerate(record.get("objects") or []):
        obj_where = f"{where}: objects[{k}]"
        if "class" not in raw:
            raise CorpusError(f"{obj_where}: missing field 'class'")
        sim = raw.get("sim")
        if sim is not None and not isinstance(sim, dict):
            raise CorpusError(f"{obj_where}: field 'sim' must be an object or null")
        try:
            objects.append(
                ObjectDetail(
                    class_name=str(raw["class"]),
                    region_caption=str(raw.get("caption") or ""),
                    box=_parse_box(raw.get("box"), obj_where),
                    similarity=dict(sim) if sim else None,
                )
            )
        except CorpusError:
            raise
    gold = decode_bio(tags, repair=repair, tokens=tokens)
    grounding: dict[int, GroundingAnnotation] = {}
    for key, raw in (record.get("grounding") or {}).items():
        g_where = f"{where}: grounding[{key!r}]"
        try:
            span_index = int(key)
        except ValueError:
            raise CorpusError(f"{g_where}: key must be a span index") from None
        if not 0 <= span_index < len(gold):
            raise CorpusError(
                f"{g_where}: sentence has {len(gold)} gold spans"
            )
        if raw is None:
            grounding[span_index] = UNGROUNDABLE
        else:
            boxes = [_parse_box(b, g_where) for b in raw]
            if not boxes:
                raise CorpusError(f"{g_where}: use null for ungroundable entities")
            grounding[span_index] = GroundingAnnotation.from_boxes(boxes)

    return TaggedSentence(
        id=sid,
        tokens=tuple(tokens),
        tags=tuple(tags),
        image_caption=record.get("caption") or None,
        objects=tuple(objects),
        grounding=grounding,
    )


def write_multimodal_jsonl(dataset: Dataset, path: str | Path):
    with open(path, "w", encoding="utf-8") as handle:
        for s in dataset.sentences:
            record = {
                "id": s.id,
                "tokens": list(s.tokens),
                "tags": [str(t) for t in s.tags],
                "caption": s.image_caption,
                "objects": [
                    {
                        "class": o.class_name,
                        "caption": o.region_caption,
                        "box": o.box.as_list(),
                        "sim": dict(o.similarity) if o.similarity else None,
                    }
                    for o in s.objects
                ],
                "grounding": {
                    str(k): ([b.as_list() for b in g.boxes] if g.groundable else None)
                    for k, g in sorted(s.grounding.items())
                },
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
