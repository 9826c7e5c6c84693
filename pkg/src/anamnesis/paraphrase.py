"""Paraphrase bank: stores, validates, and serves presence-question phrasings.

Each finding carries one expert-written question seeded from the knowledge
base plus any number of generated or manually added paraphrases.  Generated
entries start unvalidated and join the serving pool only once a reviewer
marks them consistent; the expert entry is always servable.  Candidate
generation is delegated to a one-method generator interface so the same
loop works against a rule-based stub or a remote model.
"""

from __future__ import annotations

import dataclasses
import json
import random
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .errors import ContractError, ExternalServiceError, GenerationError, NotFoundError
from .kb import Finding, KnowledgeBase

SOURCES = ("expert", "generated", "manual")
VALIDATION_STATES = ("unknown", "consistent", "inconsistent")

DEFAULT_RETRY_BUDGET = 5
DEFAULT_TEMPERATURE = 0.65
DEFAULT_PRIME_COUNT = 10


def normalize_question(text: str) -> str:
    """Trim and enforce a single terminal question mark."""
    body = text.strip().rstrip("?").rstrip()
    if not body:
        raise ContractError("question text is empty")
    return body + "?"


@dataclass(frozen=True)
class ParaphraseEntry:
    finding_id: str
    text: str
    source: str = "generated"
    validated: str = "unknown"
    note: str | None = None

    def __post_init__(self) -> None:
        if not self.finding_id:
            raise ContractError("entry requires a finding id")
        if self.source not in SOURCES:
            raise ContractError(f"unknown source {self.source!r}")
        if self.validated not in VALIDATION_STATES:
            raise ContractError(f"unknown validation state {self.validated!r}")
        object.__setattr__(self, "text", normalize_question(self.text))


@dataclass(frozen=True)
class ValidationReport:
    labeled: int
    consistent: int
    inconsistent: int
    unknown: int

    @property
    def consistency_rate(self) -> float:
        return self.consistent / self.labeled if self.labeled else 0.0


class CandidateGenerator(Protocol):
    """Anything that can propose one candidate question for a finding."""

    def propose(self, finding: Finding, rng: random.Random) -> str: ...


class ParaphraseBank:
    """Question store keyed by finding, with validation-gated serving."""

    def __init__(self, entries: Iterable[ParaphraseEntry] = ()) -> None:
        self._entries: dict[str, list[ParaphraseEntry]] = {}
        self._index: dict[tuple[str, str], int] = {}
        for entry in entries:
            self.add(entry)

    def add(self, entry: ParaphraseEntry) -> None:
        key = (entry.finding_id, entry.text)
        if key in self._index:
            raise ContractError(
                f"duplicate entry for finding {entry.finding_id!r}: {entry.text!r}")
        bucket = self._entries.setdefault(entry.finding_id, [])
        self._index[key] = len(bucket)
        bucket.append(entry)

    def __contains__(self, key: tuple[str, str]) -> bool:
        finding_id, text = key
        return (finding_id, normalize_question(text)) in self._index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParaphraseBank):
            return NotImplemented
        return self._entries == other._entries

    def finding_ids(self) -> list[str]:
        return sorted(self._entries)

    def entries_for(self, finding_id: str) -> tuple[ParaphraseEntry, ...]:
        return tuple(self._entries.get(finding_id, ()))

    def all_entries(self) -> list[ParaphraseEntry]:
        return [e for fid in self.finding_ids() for e in self._entries[fid]]

    def expert_question(self, finding_id: str) -> str:
        for entry in self._entries.get(finding_id, ()):
            if entry.source == "expert":
                return entry.text
        raise NotFoundError(f"no expert question for finding {finding_id!r}")

    def serving_pool(self, finding_id: str) -> list[str]:
        """Expert entries plus validated-consistent ones, sorted for stable draws."""
        entries = self._entries.get(finding_id)
        if not entries:
            raise NotFoundError(f"no questions for finding {finding_id!r}")
        pool = {e.text for e in entries
                if e.source == "expert" or e.validated == "consistent"}
        return sorted(pool)

    def sample_question(self, finding_id: str, rng: random.Random,
                        diversity: bool = True) -> str:
        if not diversity:
            return self.expert_question(finding_id)
        return rng.choice(self.serving_pool(finding_id))

    def record_validation(self, finding_id: str, text: str, label: str,
                          note: str | None = None) -> None:
        if label not in ("consistent", "inconsistent"):
            raise ContractError(f"validation label must be consistent or "
                                f"inconsistent, got {label!r}")
        key = (finding_id, normalize_question(text))
        if key not in self._index:
            raise NotFoundError(
                f"no entry for finding {finding_id!r} with text {text!r}")
        bucket = self._entries[finding_id]
        position = self._index[key]
        entry = bucket[position]
        if entry.source == "expert" and label == "inconsistent":
            raise ContractError("expert entries cannot be marked inconsistent")
        bucket[position] = dataclasses.replace(entry, validated=label, note=note)

    def validation_report(self) -> ValidationReport:
        """Consistency tally over non-expert entries."""
        labeled = consistent = inconsistent = unknown = 0
        for entry in self.all_entries():
            if entry.source == "expert":
                continue
            if entry.validated == "unknown":
                unknown += 1
            else:
                labeled += 1
                if entry.validated == "consistent":
                    consistent += 1
                else:
                    inconsistent += 1
        return ValidationReport(labeled, consistent, inconsistent, unknown)


def seed_from_kb(kb: KnowledgeBase) -> ParaphraseBank:
    """One consistent expert entry per finding."""
    bank = ParaphraseBank()
    for finding in kb.findings.values():
        bank.add(ParaphraseEntry(
            finding_id=finding.id,
            text=finding.expert_question,
            source="expert",
            validated="consistent",
        ))
    return bank


def generate_candidates(bank: ParaphraseBank, generator: CandidateGenerator,
                        finding: Finding, k: int, rng: random.Random,
                        retry_budget: int = DEFAULT_RETRY_BUDGET) -> list[str]:
    """Invoke the generator until k fresh texts exist for the finding.

    Fresh means distinct from every entry already stored for the finding
    and from texts accepted earlier in this call.  Each accepted text is
    added to the bank as an unvalidated generated entry.  A run of
    retry_budget consecutive stale proposals aborts the loop.
    """
    if k < 1:
        raise ContractError("k must be at least 1")
    accepted: list[str] = []
    misses = 0
    while len(accepted) < k:
        text = normalize_question(generator.propose(finding, rng))
        if (finding.id, text) in bank:
            misses += 1
            if misses >= retry_budget:
                raise GenerationError(
                    f"no fresh candidate for finding {finding.id!r} after "
                    f"{retry_budget} duplicate proposals")
            continue
        misses = 0
        bank.add(ParaphraseEntry(finding_id=finding.id, text=text))
        accepted.append(text)
    return accepted


# -- candidate generators -------------------------------------------------------

_PAIN_FORMS = (
    "Is your {part} hurting?",
    "Does your {part} hurt?",
    "Do you feel pain in your {part}?",
    "Are you experiencing pain in your {part}?",
)

_GENERIC_FORMS = (
    "Do you have {name}?",
    "Are you experiencing {name}?",
    "Have you been experiencing any {name}?",
    "Have you noticed {name}?",
)


class RuleParaphraser:
    """Deterministic rewrite-rule generator used for offline work.

    Cycles through a fixed form list per finding, so repeated proposals
    enumerate every surface form before wrapping around to duplicates.
    """

    def __init__(self) -> None:
        self._cursor: dict[str, int] = {}

    @staticmethod
    def forms_for(finding: Finding) -> tuple[str, ...]:
        name = finding.name.strip().lower()
        if name.endswith(" pain"):
            part = name[: -len(" pain")]
            return tuple(form.format(part=part) for form in _PAIN_FORMS)
        return tuple(form.format(name=name) for form in _GENERIC_FORMS)

    def propose(self, finding: Finding, rng: random.Random) -> str:
        forms = self.forms_for(finding)
        position = self._cursor.get(finding.id, 0)
        self._cursor[finding.id] = position + 1
        return forms[position % len(forms)]


Transport = Callable[[dict], dict]


class ExternalParaphraseClient:
    """Client for a remote paraphrase generator.

    Each proposal sends the finding, its expert question, a random sample
    of prime (finding, question) pairs, and the sampling temperature; the
    service answers with a single candidate text.  The transport callable
    is injectable so tests can run without a network.
    """

    def __init__(self, endpoint: str, primes: Sequence[tuple[str, str]] = (),
                 temperature: float = DEFAULT_TEMPERATURE,
                 prime_count: int = DEFAULT_PRIME_COUNT,
                 transport: Transport | None = None,
                 timeout: float = 10.0) -> None:
        self._endpoint = endpoint
        self._primes = list(primes)
        self._temperature = temperature
        self._prime_count = prime_count
        self._timeout = timeout
        self._transport = transport if transport is not None else self._http_post

    def _http_post(self, request: dict) -> dict:
        import httpx

        try:
            response = httpx.post(self._endpoint, json=request,
                                  timeout=self._timeout)
            response.raise_for_status()
            return response.json()
        except httpx.HTTPError as exc:
            raise ExternalServiceError(
                f"paraphrase service at {self._endpoint} failed: {exc}") from exc

    def build_request(self, finding: Finding, rng: random.Random) -> dict:
        count = min(self._prime_count, len(self._primes))
        chosen = rng.sample(self._primes, count) if count else []
        return {
            "finding_name": finding.name,
            "expert_question": finding.expert_question,
            "primes": [[name, question] for name, question in chosen],
            "temperature": self._temperature,
        }

    def propose(self, finding: Finding, rng: random.Random) -> str:
        response = self._transport(self.build_request(finding, rng))
        text = response.get("text") if isinstance(response, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise ExternalServiceError(
                "paraphrase service returned no usable text")
        return text


def primes_from_bank(bank: ParaphraseBank, kb: KnowledgeBase) -> list[tuple[str, str]]:
    """(finding name, expert question) pairs for priming a remote generator."""
    return [(kb.require_finding(fid).name, bank.expert_question(fid))
            for fid in bank.finding_ids()]


# -- file format -----------------------------------------------------------------

def write_bank(path: Path | str, bank: ParaphraseBank) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for entry in bank.all_entries():
            record = {
                "finding_id": entry.finding_id,
                "text": entry.text,
                "source": entry.source,
                "validated": entry.validated,
                "note": entry.note,
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_bank(path: Path | str) -> ParaphraseBank:
    bank = ParaphraseBank()
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            bank.add(ParaphraseEntry(
                finding_id=record["finding_id"],
                text=record["text"],
                source=record["source"],
                validated=record["validated"],
                note=record.get("note"),
            ))
    return bank
