"""Character vocabulary: CTC blank, word separator and the 26 lowercase letters."""

from __future__ import annotations

import string
from dataclasses import dataclass

BLANK = 0
SYMBOLS = ("<blank>", " ") + tuple(string.ascii_lowercase)
_INDEX = {s: i for i, s in enumerate(SYMBOLS)}


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace; anything outside the alphabet is an error."""
    words = text.lower().split()
    for w in words:
        bad = [ch for ch in w if ch not in _INDEX or ch == " "]
        if bad:
            raise ValueError(f"unsupported characters {''.join(sorted(set(bad)))!r} in {text!r}")
    return " ".join(words)


def encode(text: str) -> list[int]:
    return [_INDEX[ch] for ch in normalize_text(text)]


def decode(ids) -> str:
    return "".join(SYMBOLS[i] for i in ids if i != BLANK)


@dataclass(frozen=True)
class TranscriptionTarget:
    text: str
    token_ids: tuple

    @classmethod
    def from_text(cls, text: str) -> "TranscriptionTarget":
        clean = normalize_text(text)
        if not clean:
            raise ValueError("empty target phrase")
        return cls(clean, tuple(encode(clean)))

    @property
    def words(self) -> list[str]:
        return self.text.split()

    def min_frames(self) -> int:
        """Shortest alignment: one frame per token plus a blank between repeats."""
        ids = self.token_ids
        return len(ids) + sum(1 for a, b in zip(ids, ids[1:]) if a == b)
