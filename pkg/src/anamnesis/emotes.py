"""Emote codes: mining them from doctor-edited questions, and sampling them.

Doctors editing machine-suggested questions tend to prepend a short warm
phrase ("Okay.", "Sorry to hear that.") before the clinical content.  The
miner recovers that prefix by splitting the edited question on punctuation,
fuzzy-matching each segment against the default question, and taking
everything before the best-matching segment.  Recovered phrases are coded via
an exact-match lexicon (after normalization); anything unknown goes to a
review list instead of being auto-coded.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .errors import ContractError, NotFoundError, SchemaError
from .text import extract_prefix_before_best_match, fuzzy_score, normalize

NONE = "none"
AFFIRMATIVE = "affirmative"
EMPATHY = "empathy"
APOLOGY = "apology"

# Fixed everywhere: classifier outputs, report rows and probability vectors
# all use this order.
CLASS_ORDER = (NONE, AFFIRMATIVE, EMPATHY, APOLOGY)
EMOTE_CODES = frozenset(CLASS_ORDER)


def check_code(code: str) -> str:
    if code not in EMOTE_CODES:
        raise ContractError(f"unknown emote code {code!r}")
    return code


@dataclass(frozen=True)
class ContextTriple:
    """The three text sources the emote decision conditions on."""

    previous_question: str
    patient_response: str
    target_finding: str

    def __post_init__(self):
        if not self.target_finding:
            raise ContractError("target_finding must be non-empty")

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.previous_question, self.patient_response, self.target_finding)


@dataclass(frozen=True)
class EmoteDatasetRow:
    context: ContextTriple
    emote_phrase: str
    code: str

    def __post_init__(self):
        check_code(self.code)
        if (self.code == NONE) != (self.emote_phrase == ""):
            raise ContractError("emote_phrase must be empty exactly when code is none")


@dataclass(frozen=True)
class EditedQuestionRecord:
    """One doctor edit: what the machine suggested and what was sent."""

    previous_question: str
    patient_response: str
    default_question: str
    edited_question: str


# Seed phrases per code, as shipped in data/emote_lexicon.jsonl.
DEFAULT_LEXICON_PHRASES: dict[str, tuple[str, ...]] = {
    AFFIRMATIVE: (
        "Thanks for the input",
        "Okay",
        "I see",
        "Got it",
    ),
    EMPATHY: (
        "Sorry about that",
        "That's concerning",
        "Okay, I'm sorry to hear",
    ),
    APOLOGY: (
        "I am sorry for asking",
        "I apologise if this is personal",
        "I am sorry for asking if it sounds personal but may I know",
    ),
}


class EmoteLexicon:
    """Phrase -> code table with normalized exact lookup."""

    def __init__(self, phrases: dict[str, Iterable[str]]):
        self.phrases: dict[str, list[str]] = {}
        self._by_normal: dict[str, str] = {}
        for code, texts in phrases.items():
            check_code(code)
            if code == NONE:
                raise ContractError("the none code has no phrases")
            bucket = []
            for text in texts:
                if not text.strip():
                    raise ContractError("lexicon phrases must be non-empty")
                key = normalize(text)
                if key in self._by_normal:
                    raise ContractError(f"duplicate lexicon phrase {text!r}")
                self._by_normal[key] = code
                bucket.append(text)
            self.phrases[code] = bucket

    @classmethod
    def default(cls) -> "EmoteLexicon":
        return cls(DEFAULT_LEXICON_PHRASES)

    def lookup(self, phrase: str) -> Optional[str]:
        """Code for a phrase, by exact match after normalization."""
        return self._by_normal.get(normalize(phrase))

    def phrases_for(self, code: str) -> list[str]:
        check_code(code)
        if code == NONE:
            raise ContractError("the none code has no phrases")
        return list(self.phrases.get(code, []))

    def all_phrases(self) -> list[tuple[str, str]]:
        return [(code, p) for code in CLASS_ORDER if code != NONE
                for p in self.phrases.get(code, [])]

    def sample(self, code: str, rng: random.Random) -> str:
        phrases = self.phrases_for(code)
        if not phrases:
            raise NotFoundError(f"no phrases for code {code!r}")
        return rng.choice(phrases)

    def save(self, path) -> None:
        lines = [json.dumps({"code": code, "phrase": phrase})
                 for code, phrase in self.all_phrases()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EmoteLexicon":
        table: dict[str, list[str]] = {}
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                record = json.loads(line)
                table.setdefault(record["code"], []).append(record["phrase"])
            except (json.JSONDecodeError, KeyError, TypeError):
                raise SchemaError(f"line {line_no}: malformed lexicon record") from None
        return cls(table)


def sample_emote_phrase(lexicon: EmoteLexicon, code: str, rng: random.Random) -> str:
    """Uniform draw over the lexicon phrases of a non-none code."""
    if code == NONE:
        raise ContractError("cannot sample a phrase for the none code")
    return lexicon.sample(code, rng)


# -- mining ---------------------------------------------------------------------

def extract_emote_phrase(default_question: str, edited_question: str) -> str:
    """The prefix a doctor prepended to the default question, maybe empty.

    The segment of the edited question most similar to the default question
    is located by fuzzy score (earliest wins ties); everything before it is
    the emote phrase, returned trimmed and otherwise byte-exact.
    """
    if not default_question or not edited_question:
        raise ContractError("default and edited question must be non-empty")
    return extract_prefix_before_best_match(default_question, edited_question)


def build_emote_dataset(records: Iterable[EditedQuestionRecord],
                        lexicon: EmoteLexicon,
                        review: Optional[list] = None) -> list[EmoteDatasetRow]:
    """Rows for coded records; unmatched phrases go to `review`, not rows."""
    rows: list[EmoteDatasetRow] = []
    for record in records:
        phrase = extract_emote_phrase(record.default_question, record.edited_question)
        if phrase == "":
            code = NONE
        else:
            found = lexicon.lookup(phrase)
            if found is None:
                if review is not None:
                    review.append((record, phrase))
                continue
            code = found
        rows.append(EmoteDatasetRow(
            context=ContextTriple(
                previous_question=record.previous_question,
                patient_response=record.patient_response,
                target_finding=record.default_question,
            ),
            emote_phrase=phrase,
            code=code,
        ))
    return rows


def stratified_split(rows: list[EmoteDatasetRow], test_fraction: float,
                     seed: int) -> tuple[list[EmoteDatasetRow], list[EmoteDatasetRow]]:
    """Seeded train/test split, stratified by code."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError("test_fraction must be in (0, 1)")
    rng = random.Random(f"split:{seed}")
    train: list[EmoteDatasetRow] = []
    test: list[EmoteDatasetRow] = []
    for code in CLASS_ORDER:
        bucket = [row for row in rows if row.code == code]
        rng.shuffle(bucket)
        n_test = int(round(len(bucket) * test_fraction))
        test.extend(bucket[:n_test])
        train.extend(bucket[n_test:])
    rng.shuffle(train)
    rng.shuffle(test)
    return train, test


# -- file formats -----------------------------------------------------------------

def write_emote_rows(rows: Iterable[EmoteDatasetRow], path) -> None:
    lines = []
    for row in rows:
        lines.append(json.dumps({
            "previous_question": row.context.previous_question,
            "patient_response": row.context.patient_response,
            "target_finding": row.context.target_finding,
            "emote_phrase": row.emote_phrase,
            "code": row.code,
        }))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_emote_rows(path) -> list[EmoteDatasetRow]:
    rows = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            r = json.loads(line)
            rows.append(EmoteDatasetRow(
                context=ContextTriple(r["previous_question"], r["patient_response"],
                                      r["target_finding"]),
                emote_phrase=r["emote_phrase"],
                code=r["code"],
            ))
        except (json.JSONDecodeError, KeyError, TypeError):
            raise SchemaError(f"line {line_no}: malformed emote row") from None
    return rows


def write_edit_records(records: Iterable[EditedQuestionRecord], path) -> None:
    lines = [json.dumps(vars(r)) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_edit_records(path) -> list[EditedQuestionRecord]:
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            r = json.loads(line)
            records.append(EditedQuestionRecord(
                previous_question=r["previous_question"],
                patient_response=r["patient_response"],
                default_question=r["default_question"],
                edited_question=r["edited_question"],
            ))
        except (json.JSONDecodeError, KeyError, TypeError):
            raise SchemaError(f"line {line_no}: malformed edit record") from None
    return records
