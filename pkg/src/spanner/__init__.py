"""spanner: a two-stage span-candidate NER pipeline.

Stage 1 detects entity span candidates with a BIO tagger; stage 2 classifies
each candidate from a knowledge-augmented prompt and scores its overlap with
detected image objects. Training supports confidence-weighted
self-distillation and adversarial weight perturbation; evaluation covers
entity-wise F1, the grounded triple metric, and seen/unseen breakdowns.
"""

__version__ = "0.1.0"

from .data import (
    NON_ENTITY,
    BioTag,
    BoundingBox,
    Dataset,
    GroundingAnnotation,
    ObjectDetail,
    Span,
    TaggedSentence,
    decode_bio,
    encode_bio,
    iou,
    read_conll,
    read_multimodal_jsonl,
)
from .errors import SpannerError

__all__ = [
    "__version__",
    "NON_ENTITY",
    "BioTag",
    "BoundingBox",
    "Dataset",
    "GroundingAnnotation",
    "ObjectDetail",
    "Span",
    "TaggedSentence",
    "decode_bio",
    "encode_bio",
    "iou",
    "read_conll",
    "read_multimodal_jsonl",
    "SpannerError",
]
