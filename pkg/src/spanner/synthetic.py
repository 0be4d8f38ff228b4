"""Synthetic multimodal NER corpus with deterministic structure.

Every entity type has its own name pool and its own context marker words, so
types are decidable from text alone; the wiki snapshot and object captions
reinforce the signal. For groundable entities exactly one detected object's
box equals the gold region and its caption quotes the entity surface;
distractor objects reference entities absent from the sentence and sit in
disjoint regions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    BioTag,
    BoundingBox,
    Dataset,
    GroundingAnnotation,
    ObjectDetail,
    TaggedSentence,
    O_TAG,
    write_multimodal_jsonl,
)
from .util import atomic_write_text, derive_seed

ENTITY_TYPES = ("LOC", "MISC", "ORG", "PER")

# left/right context words, one pair per type, plus wiki/caption vocabulary
_MARKERS = {
    "PER": ("mr", "spoke"),
    "LOC": ("near", "valley"),
    "ORG": ("joined", "group"),
    "MISC": ("about", "event"),
}
_TYPE_NOUN = {"PER": "person", "LOC": "place", "ORG": "company", "MISC": "happening"}
_TYPE_CLASS = {"PER": "person", "LOC": "landmark", "ORG": "logo", "MISC": "poster"}

_SYLLABLES = (
    "ba", "ce", "di", "fo", "gu", "ka", "le", "mi", "no", "pu",
    "ra", "se", "ti", "vo", "wu", "za", "bel", "dor", "fin", "gal",
)


@dataclass(frozen=True)
class CorpusSpec:
    sentences: int = 200
    filler_words: int = 220
    names_per_type: int = 12
    two_token_fraction: float = 0.3
    ungroundable_fraction: float = 0.25
    no_entity_fraction: float = 0.1
    two_entity_fraction: float = 0.3


def _make_name(rng: np.random.Generator) -> str:
    parts = rng.choice(len(_SYLLABLES), size=int(rng.integers(2, 4)))
    return "".join(_SYLLABLES[i] for i in parts).capitalize()


def _name_pools(spec: CorpusSpec, rng: np.random.Generator) -> dict[str, list[str]]:
    surnames = []
    while len(surnames) < 8:
        name = _make_name(rng)
        if name not in surnames:
            surnames.append(name)
    pools: dict[str, list[str]] = {}
    taken = set(surnames)
    for entity_type in ENTITY_TYPES:
        pool = []
        while len(pool) < spec.names_per_type:
            first = _make_name(rng)
            if first in taken:
                continue
            taken.add(first)
            if rng.random() < spec.two_token_fraction:
                pool.append(f"{first} {surnames[int(rng.integers(len(surnames)))]}")
            else:
                pool.append(first)
        pools[entity_type] = pool
    return pools


def wiki_summary(surface: str, entity_type: str) -> str:
    return f"{surface} is a widely known {_TYPE_NOUN[entity_type]} ."


def _gold_box(slot: int) -> BoundingBox:
    return BoundingBox(50.0 + 300.0 * slot, 50.0, 250.0 + 300.0 * slot, 250.0)


def _distractor_box(slot: int) -> BoundingBox:
    return BoundingBox(50.0 + 300.0 * slot, 600.0, 250.0 + 300.0 * slot, 800.0)


def generate_corpus(
    spec: CorpusSpec = CorpusSpec(), seed: int = 0
) -> tuple[Dataset, dict[str, str]]:
    """Build the corpus and its wiki snapshot (surface -> summary)."""
    rng = np.random.default_rng(derive_seed(seed, "synthetic-corpus"))
    pools = _name_pools(spec, rng)
    fillers = [f"w{i:03d}" for i in range(spec.filler_words)]
    snapshot = {
        surface: wiki_summary(surface, entity_type)
        for entity_type, pool in pools.items()
        for surface in pool
    }
    all_surfaces = [(t, s) for t in ENTITY_TYPES for s in pools[t]]

    sentences = []
    for index in range(spec.sentences):
        draw = rng.random()
        if draw < spec.no_entity_fraction:
            entity_count = 0
        elif draw < spec.no_entity_fraction + spec.two_entity_fraction:
            entity_count = 2
        else:
            entity_count = 1

        tokens: list[str] = []
        tags: list[BioTag] = []

        def add_fillers(low, high):
            for _ in range(int(rng.integers(low, high + 1))):
                tokens.append(fillers[int(rng.integers(len(fillers)))])
                tags.append(O_TAG)

        picked: list[tuple[str, str]] = []
        add_fillers(1, 3)
        for _ in range(entity_count):
            entity_type = ENTITY_TYPES[int(rng.integers(len(ENTITY_TYPES)))]
            surface = pools[entity_type][int(rng.integers(len(pools[entity_type])))]
            if any(surface == s for _, s in picked):
                continue
            picked.append((entity_type, surface))
            left, right = _MARKERS[entity_type]
            tokens.append(left)
            tags.append(O_TAG)
            parts = surface.split()
            tokens.extend(parts)
            tags.append(BioTag("B", entity_type))
            tags.extend(BioTag("I", entity_type) for _ in parts[1:])
            tokens.append(right)
            tags.append(O_TAG)
            add_fillers(1, 2)
        add_fillers(1, 2)

        caption = (
            f"a photo of a {_TYPE_NOUN[picked[0][0]]} scene"
            if picked
            else "a photo of a plain scene"
        )
        objects: list[ObjectDetail] = []
        grounding: dict[int, GroundingAnnotation] = {}
        sims_for = lambda own: {
            s: (0.9 if s == own else 0.1) for _, s in picked
        }
        for slot, (entity_type, surface) in enumerate(picked):
            if rng.random() < spec.ungroundable_fraction:
                grounding[slot] = GroundingAnnotation.from_boxes(None)
                continue
            box = _gold_box(slot)
            grounding[slot] = GroundingAnnotation.from_boxes([box])
            objects.append(
                ObjectDetail(
                    class_name=_TYPE_CLASS[entity_type],
                    region_caption=f"a shot of {surface}",
                    box=box,
                    similarity=sims_for(surface),
                )
            )
        for slot in range(2):
            other_type, other_surface = all_surfaces[int(rng.integers(len(all_surfaces)))]
            if any(other_surface == s for _, s in picked):
                continue
            objects.append(
                ObjectDetail(
                    class_name=_TYPE_CLASS[other_type],
                    region_caption=f"a shot of {other_surface}",
                    box=_distractor_box(slot),
                    similarity=sims_for(""),
                )
            )
        order = rng.permutation(len(objects))
        sentences.append(
            TaggedSentence(
                id=f"syn-{index:04d}",
                tokens=tuple(tokens),
                tags=tuple(tags),
                image_caption=caption,
                objects=tuple(objects[i] for i in order),
                grounding=grounding,
            )
        )
    dataset = Dataset(
        name="synthetic",
        sentences=tuple(sentences),
        entity_types=ENTITY_TYPES,
        split="train",
    )
    return dataset, snapshot


def write_corpus(
    out_dir: str | Path, spec: CorpusSpec = CorpusSpec(), seed: int = 0
) -> tuple[Path, Path]:
    """Write corpus.jsonl and wiki_snapshot.json; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, snapshot = generate_corpus(spec, seed)
    corpus_path = out_dir / "corpus.jsonl"
    snapshot_path = out_dir / "wiki_snapshot.json"
    write_multimodal_jsonl(dataset, corpus_path)
    atomic_write_text(snapshot_path, json.dumps(snapshot, indent=1, sort_keys=True) + "\n")
    return corpus_path, snapshot_path
