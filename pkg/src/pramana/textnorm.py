"""Text normalization and string-distance metrics.

Characters are Unicode scalar values (Python ``str`` elements) after the
configured normal form, not grapheme clusters, so a differing Devanagari
vowel sign counts as a full edit.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Hashable, Sequence

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class NormalizationConfig:
    unicode_form: str = "NFC"
    collapse_whitespace: bool = True
    strip_punctuation: frozenset = field(default_factory=frozenset)
    lowercase_latin: bool = True

    def __post_init__(self):
        if self.unicode_form not in ("NFC", "NFKC"):
            raise ValueError(f"unicode_form must be NFC or NFKC, got {self.unicode_form!r}")
        object.__setattr__(self, "strip_punctuation", frozenset(self.strip_punctuation))

    def to_dict(self) -> dict:
        return {
            "unicode_form": self.unicode_form,
            "collapse_whitespace": self.collapse_whitespace,
            "strip_punctuation": sorted(self.strip_punctuation),
            "lowercase_latin": self.lowercase_latin,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "NormalizationConfig":
        d = dict(d or {})
        if "strip_punctuation" in d:
            d["strip_punctuation"] = frozenset(d["strip_punctuation"])
        return cls(**d)


DEFAULT_NORMALIZATION = NormalizationConfig()


@lru_cache(maxsize=4096)
def _is_latin(ch: str) -> bool:
    return unicodedata.name(ch, "").startswith("LATIN")


def normalize(text: str, cfg: NormalizationConfig = DEFAULT_NORMALIZATION) -> str:
    form = cfg.unicode_form
    out = unicodedata.normalize(form, text)
    if cfg.lowercase_latin:
        out = "".join(ch.lower() if _is_latin(ch) else ch for ch in out)
    if cfg.strip_punctuation:
        out = "".join(ch for ch in out if ch not in cfg.strip_punctuation)
    # lowercasing and removals can expose new compositions
    out = unicodedata.normalize(form, out)
    if cfg.collapse_whitespace:
        out = _WS.sub(" ", out)
    return out.strip()


def levenshtein(p: Sequence[Hashable], q: Sequence[Hashable]) -> int:
    """Unit-cost edit distance between two sequences.

    Works on strings (character level) and on token lists (word level).
    Inputs are compared as given; callers normalize first.
    """
    if p == q:
        return 0
    # common prefix/suffix never contribute edits
    start = 0
    end_p, end_q = len(p), len(q)
    while start < end_p and start < end_q and p[start] == q[start]:
        start += 1
    while end_p > start and end_q > start and p[end_p - 1] == q[end_q - 1]:
        end_p -= 1
        end_q -= 1
    a, b = p[start:end_p], q[start:end_q]
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cost = 0 if ca == cb else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


def matching_score(p: str, q: str) -> float:
    """``1 - LD(p, q) / (|p| + |q|)``; two empty texts agree vacuously."""
    total = len(p) + len(q)
    if total == 0:
        return 1.0
    return 1.0 - levenshtein(p, q) / total


def word_edits(reference: str, hypothesis: str) -> tuple[int, int]:
    """Return ``(word edit count, reference word count)``."""
    ref = reference.split()
    return levenshtein(ref, hypothesis.split()), len(ref)


def wer(reference: str, hypothesis: str) -> float:
    edits, n = word_edits(reference, hypothesis)
    if n == 0:
        raise ValueError("empty reference")
    return edits / n


def cer(reference: str, hypothesis: str) -> float:
    if not reference:
        raise ValueError("empty reference")
    return levenshtein(reference, hypothesis) / len(reference)
