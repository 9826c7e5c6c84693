"""Text normalization and fuzzy matching helpers.

Used for emote-phrase extraction, paraphrase consistency checks and free-text
finding lookup.  Scores are integers 0..100 so thresholds read naturally.
"""
from __future__ import annotations

import re
import string
from dataclasses import dataclass

from .errors import ContractError

# Sentence-ish terminators. Commas are deliberately not included: phrases such
# as "Okay, I'm sorry to hear" must survive as a single segment.
TERMINATORS = ".!?;"

_WS_RE = re.compile(r"\s+")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize(text: str) -> str:
    """Lowercase, drop punctuation, collapse runs of whitespace."""
    return _WS_RE.sub(" ", text.lower().translate(_PUNCT_TABLE)).strip()


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit costs, two-row dynamic programme."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,        # deletion
                current[j - 1] + 1,     # insertion
                previous[j - 1] + (ca != cb),  # substitution
            ))
        previous = current
    return previous[-1]


def fuzzy_score(a: str, b: str) -> int:
    """Similarity of two strings after normalization, 0..100.

    100 * (1 - distance / max(len)) rounded half up.  Two strings that
    normalize to empty count as identical.
    """
    na, nb = normalize(a), normalize(b)
    if not na and not nb:
        return 100
    dist = levenshtein(na, nb)
    longest = max(len(na), len(nb))
    return int(100.0 * (1.0 - dist / longest) + 0.5)


@dataclass(frozen=True)
class Segment:
    """A span of the original string: text == source[start:end]."""

    text: str
    start: int
    end: int


def split_on_punctuation(text: str) -> list[Segment]:
    """Split on . ! ? ; keeping each delimiter with the preceding segment.

    Offsets point into the unmodified input, so any prefix of the input can be
    reconstructed exactly as text[:segment.start].
    """
    segments: list[Segment] = []
    start = 0
    for i, ch in enumerate(text):
        if ch in TERMINATORS:
            segments.append(Segment(text[start:i + 1], start, i + 1))
            start = i + 1
    if start < len(text):
        segments.append(Segment(text[start:], start, len(text)))
    return segments


def extract_prefix_before_best_match(target: str, edited: str) -> str:
    """Everything before the segment of `edited` most similar to `target`.

    Segments come from split_on_punctuation; the earliest segment wins ties.
    The returned prefix is cut from the original string (so inner punctuation
    and spacing survive) and only trimmed at the edges.
    """
    segments = split_on_punctuation(edited)
    if not segments:
        return ""
    best = max(segments, key=lambda s: fuzzy_score(s.text, target))
    return edited[:best.start].strip()


def best_fuzzy_match(query: str, candidates: dict[str, str], threshold: int = 90):
    """Best (key, score) among candidates by fuzzy_score against their values.

    Returns (key, score, suggestions) where key is None when nothing reaches
    the threshold; suggestions are the top three keys by score either way.
    Ties resolve to the lexicographically smallest key.
    """
    if not candidates:
        raise ContractError("no candidates to match against")
    scored = sorted(
        ((fuzzy_score(query, value), key) for key, value in candidates.items()),
        key=lambda pair: (-pair[0], pair[1]),
    )
    suggestions = [key for _, key in scored[:3]]
    top_score, top_key = scored[0]
    if top_score >= threshold:
        return top_key, top_score, suggestions
    return None, top_score, suggestions
