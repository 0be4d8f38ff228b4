"""Word-level vocabulary with reserved special tokens."""

from __future__ import annotations

from typing import Iterable

UNK = "<unk>"
MASK = "[mask]"
OBJ = "[obj]"


class Vocabulary:
    """Deterministic token <-> id map; unknown tokens resolve to UNK."""

    def __init__(self, tokens: Iterable[str]):
        self._tokens = list(tokens)
        self._index = {t: i for i, t in enumerate(self._tokens)}
        if UNK not in self._index:
            raise ValueError("vocabulary must contain the UNK token")

    @classmethod
    def build(
        cls,
        token_streams: Iterable[Iterable[str]],
        specials: tuple[str, ...] = (UNK,),
    ) -> "Vocabulary":
        """Specials first (fixed ids), then corpus tokens in first-seen order."""
        tokens = list(specials)
        seen = set(tokens)
        for stream in token_streams:
            for token in stream:
                if token not in seen:
                    seen.add(token)
                    tokens.append(token)
        return cls(tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def ids(self, tokens: Iterable[str]) -> list[int]:
        unk = self._index[UNK]
        return [self._index.get(t, unk) for t in tokens]

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def to_list(self) -> list[str]:
        return list(self._tokens)

    @classmethod
    def from_list(cls, tokens: list[str]) -> "Vocabulary":
        return cls(tokens)
