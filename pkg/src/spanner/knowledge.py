"""Knowledge fetching and prompt assembly for the recognition stage.

Per candidate we gather a wiki summary (disk cache, then offline snapshot,
then the live endpoint when allowed), the whole-image caption, and detected
objects ordered by similarity to the candidate, and render everything into
one prompt:

    The entity is [mask] for {entity} in this sentence. {sentence}
    {wiki} {caption} [obj] {class}: {caption} [obj] ...

Empty knowledge slots vanish along with their separating space. The mask
token representation drives classification; each [obj] token representation
drives that object's overlap score.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from .data import ObjectDetail, TaggedSentence
from .errors import PromptError, SpannerError
from .stage1 import SpanCandidate
from .util import atomic_write_text
from .vocab import MASK, OBJ, Vocabulary

log = logging.getLogger(__name__)

PROMPT_PREFIX = ("The", "entity", "is", MASK, "for")
MASK_POSITION = 3

_KEY_RE = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class WikiSnippet:
    query: str
    text: str
    fetched_at: float
    source: str  # live | cache | snapshot | miss

    def __post_init__(self):
        if (self.source == "miss") != (self.text == ""):
            raise SpannerError("miss snippets and only miss snippets are empty")


@dataclass(frozen=True)
class KnowledgeConfig:
    cache_dir: str | None = None
    snapshot_path: str | None = None
    online: bool = False
    url_template: str = "https://en.wikipedia.org/api/rest_v1/page/summary/{query}"
    max_wiki_chars: int = 600
    max_objects: int = 15
    timeout_seconds: float = 5.0


def truncate_at_word(text: str, max_chars: int) -> str:
    """Longest whitespace-delimited prefix fitting in max_chars."""
    text = " ".join(text.split())
    if len(text) <= max_chars:
        return text
    kept: list[str] = []
    used = 0
    for word in text.split(" "):
        needed = len(word) + (1 if kept else 0)
        if used + needed > max_chars:
            break
        kept.append(word)
        used += needed
    return " ".join(kept)


def cache_key(surface: str) -> str:
    key = _KEY_RE.sub("_", surface.lower()).strip("_")
    return key or "_"


class WikiClient:
    """Summary lookup with the cache -> snapshot -> live order.

    Misses return an empty snippet, never raise. A configured but unreadable
    snapshot file fails here, at construction, not per query.
    """

    def __init__(self, config: KnowledgeConfig):
        self.config = config
        self._snapshot: dict[str, str] = {}
        if config.snapshot_path:
            try:
                raw = json.loads(Path(config.snapshot_path).read_text())
            except (OSError, json.JSONDecodeError) as err:
                raise SpannerError(
                    f"wiki snapshot {config.snapshot_path} unreadable: {err}"
                ) from None
            if not isinstance(raw, dict):
                raise SpannerError("wiki snapshot must be a surface -> summary map")
            self._snapshot = {str(k): str(v) for k, v in raw.items()}

    def _cache_path(self, surface: str) -> Path | None:
        if not self.config.cache_dir:
            return None
        return Path(self.config.cache_dir) / f"{cache_key(surface)}.json"

    def _read_cache(self, surface: str) -> WikiSnippet | None:
        path = self._cache_path(surface)
        if path is None or not path.exists():
            return None
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            log.warning("ignoring unreadable cache entry %s", path)
            return None
        text = truncate_at_word(raw.get("text", ""), self.config.max_wiki_chars)
        if not text:
            return None
        return WikiSnippet(surface, text, float(raw.get("fetched_at", 0.0)), "cache")

    def _write_cache(self, surface: str, text: str, fetched_at: float):
        path = self._cache_path(surface)
        if path is None:
            return
        payload = {"query": surface, "text": text, "fetched_at": fetched_at}
        atomic_write_text(path, json.dumps(payload, ensure_ascii=False))

    def _fetch_live(self, surface: str) -> WikiSnippet:
        import requests

        url = self.config.url_template.format(query=requests.utils.quote(surface))
        try:
            response = requests.get(url, timeout=self.config.timeout_seconds)
            response.raise_for_status()
            body = response.json()
        except Exception as err:  # degrade to a miss, never fail a run
            log.warning("live wiki lookup failed for %r: %s", surface, err)
            return WikiSnippet(surface, "", 0.0, "miss")
        text = body.get("extract") or ""
        text = truncate_at_word(text, self.config.max_wiki_chars)
        if not text:
            return WikiSnippet(surface, "", 0.0, "miss")
        now = time.time()
        self._write_cache(surface, text, now)
        return WikiSnippet(surface, text, now, "live")

    def fetch(self, surface: str) -> WikiSnippet:
        if not surface:
            raise SpannerError("cannot fetch knowledge for an empty surface")
        cached = self._read_cache(surface)
        if cached is not None:
            return cached
        if surface in self._snapshot:
            text = truncate_at_word(self._snapshot[surface], self.config.max_wiki_chars)
            if text:
                return WikiSnippet(surface, text, 0.0, "snapshot")
        if self.config.online:
            return self._fetch_live(surface)
        return WikiSnippet(surface, "", 0.0, "miss")


def fetch_wiki(surface: str, client: WikiClient) -> WikiSnippet:
    return client.fetch(surface)


def _fallback_score(surface: str, detail: ObjectDetail) -> float:
    """Token-level Jaccard overlap, case-folded, between the candidate and
    the object's class + region caption."""
    a = set(surface.lower().split())
    b = set(f"{detail.class_name} {detail.region_caption}".lower().split())
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def rank_objects(
    candidate: SpanCandidate,
    objects: list[ObjectDetail],
    max_objects: int,
) -> list[ObjectDetail]:
    """Sort by similarity to the candidate (provided score when available,
    lexical fallback otherwise), stable on ties, truncated to max_objects."""
    surface = candidate.span.surface

    def score(detail: ObjectDetail) -> float:
        if detail.similarity and surface in detail.similarity:
            return float(detail.similarity[surface])
        return _fallback_score(surface, detail)

    scored = [(score(d), i, d) for i, d in enumerate(objects)]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [d for _, _, d in scored[:max_objects]]


@dataclass(frozen=True)
class KnowledgeBundle:
    candidate: SpanCandidate
    wiki: WikiSnippet
    caption: str | None
    objects: tuple[ObjectDetail, ...]


def assemble_bundle(
    candidate: SpanCandidate,
    sentence: TaggedSentence,
    client: WikiClient,
    max_objects: int | None = None,
) -> KnowledgeBundle:
    limit = max_objects if max_objects is not None else client.config.max_objects
    return KnowledgeBundle(
        candidate=candidate,
        wiki=client.fetch(candidate.span.surface),
        caption=sentence.image_caption,
        objects=tuple(rank_objects(candidate, list(sentence.objects), limit)),
    )


@dataclass(frozen=True)
class PromptSequence:
    token_ids: tuple[int, ...]
    tokens: tuple[str, ...]
    mask_position: int
    obj_positions: tuple[int, ...]
    candidate_ref: SpanCandidate

    def num_objects(self) -> int:
        return len(self.obj_positions)


def _knowledge_tokens(text: str) -> list[str]:
    # special tokens inside knowledge text would corrupt position bookkeeping
    return [t for t in text.split() if t not in (MASK, OBJ)]


def prompt_tokens(
    candidate: SpanCandidate,
    sentence: TaggedSentence,
    bundle: KnowledgeBundle,
) -> list[str]:
    """The full, untruncated prompt token stream."""
    surface_tokens = candidate.span.surface.split()
    if not surface_tokens:
        raise PromptError("candidate has an empty surface")
    tokens = list(PROMPT_PREFIX) + surface_tokens + ["in", "this", "sentence."]
    tokens.extend(sentence.tokens)
    if bundle.wiki.text:
        tokens.extend(_knowledge_tokens(bundle.wiki.text))
    if bundle.caption:
        tokens.extend(_knowledge_tokens(bundle.caption))
    for detail in bundle.objects:
        tokens.append(OBJ)
        tokens.extend(_knowledge_tokens(f"{detail.class_name}: {detail.region_caption}"))
    return tokens


def render_prompt(
    candidate: SpanCandidate,
    sentence: TaggedSentence,
    bundle: KnowledgeBundle,
) -> str:
    return " ".join(prompt_tokens(candidate, sentence, bundle))


def build_prompt(
    candidate: SpanCandidate,
    sentence: TaggedSentence,
    bundle: KnowledgeBundle,
    vocab: Vocabulary,
    max_sequence_length: int,
) -> PromptSequence:
    """Tokenize the rendered prompt against ``vocab``.

    Truncates from the right, never the mask; a trailing object marker whose
    detail text was fully cut is dropped with it. Objects surviving the cut
    are exactly ``bundle.objects[:len(obj_positions)]``.
    """
    if bundle.candidate != candidate:
        raise PromptError("bundle belongs to a different candidate")
    tokens = prompt_tokens(candidate, sentence, bundle)
    head_length = len(PROMPT_PREFIX) + len(candidate.span.surface.split()) + 3 + len(
        sentence.tokens
    )
    if head_length > max_sequence_length:
        raise PromptError(
            f"prompt head ({head_length} tokens) exceeds the maximum sequence "
            f"length {max_sequence_length}"
        )
    if len(tokens) > max_sequence_length:
        tokens = tokens[:max_sequence_length]
        while tokens and tokens[-1] == OBJ:
            tokens.pop()
    obj_positions = tuple(i for i, t in enumerate(tokens) if t == OBJ)
    return PromptSequence(
        token_ids=tuple(vocab.ids(tokens)),
        tokens=tuple(tokens),
        mask_position=MASK_POSITION,
        obj_positions=obj_positions,
        candidate_ref=candidate,
    )
