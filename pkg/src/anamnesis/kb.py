"""Knowledge base of diseases, findings and weighted associations.

Each association carries two integer strengths: how strongly a present
finding evokes the disease (es, 0..5) and how strongly the disease ought to
produce the finding, i.e. how much an absent finding counts against it
(tf, 1..5).  A case is scored additively over its asserted findings and the
scores feed a softmax differential.

The on-disk format is line-oriented JSON, one record per line, with a "kind"
key of disease | finding | assoc.  Blank lines and lines starting with '#'
are skipped.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import ContractError, IntegrityError, NotFoundError, SchemaError

PRESENT = "present"
ABSENT = "absent"
POLARITIES = (PRESENT, ABSENT)

DEFAULT_TEMPERATURE = 5.0


@dataclass(frozen=True)
class Disease:
    id: str
    name: str


@dataclass(frozen=True)
class Finding:
    id: str
    name: str
    expert_question: str
    is_demographic: bool = False
    exclusion_group: Optional[str] = None


@dataclass(frozen=True)
class Association:
    finding_id: str
    disease_id: str
    es: int  # evoking strength, 0..5
    tf: int  # term frequency, 1..5


@dataclass(frozen=True)
class Assertion:
    """A finding observed for the current patient, present or absent."""

    finding_id: str
    polarity: str

    def __post_init__(self):
        if self.polarity not in POLARITIES:
            raise ContractError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")

    @property
    def is_present(self) -> bool:
        return self.polarity == PRESENT


@dataclass(frozen=True)
class DifferentialEntry:
    disease_id: str
    raw_score: float
    probability: float


@dataclass(frozen=True)
class DifferentialDiagnosis:
    """Diseases ordered by descending raw score; ties break on disease id."""

    entries: tuple[DifferentialEntry, ...]

    def probability_of(self, disease_id: str) -> float:
        for entry in self.entries:
            if entry.disease_id == disease_id:
                return entry.probability
        raise NotFoundError(f"disease {disease_id!r} not in differential")

    def top(self) -> DifferentialEntry:
        return self.entries[0]


class KnowledgeBase:
    """Immutable-by-convention container with lookup indexes."""

    def __init__(self, diseases: Iterable[Disease], findings: Iterable[Finding],
                 associations: Iterable[Association]):
        self.diseases: dict[str, Disease] = {}
        self.findings: dict[str, Finding] = {}
        self.assoc_by_finding: dict[str, dict[str, Association]] = {}
        self.exclusion_groups: dict[str, set[str]] = {}

        for disease in diseases:
            if disease.id in self.diseases:
                raise IntegrityError(f"duplicate disease id {disease.id!r}")
            self.diseases[disease.id] = disease
        for finding in findings:
            if finding.id in self.findings:
                raise IntegrityError(f"duplicate finding id {finding.id!r}")
            self.findings[finding.id] = finding
            if finding.exclusion_group is not None:
                self.exclusion_groups.setdefault(finding.exclusion_group, set()).add(finding.id)
        for assoc in associations:
            if assoc.finding_id not in self.findings:
                raise IntegrityError(
                    f"association references unknown finding {assoc.finding_id!r}")
            if assoc.disease_id not in self.diseases:
                raise IntegrityError(
                    f"association references unknown disease {assoc.disease_id!r}")
            per_finding = self.assoc_by_finding.setdefault(assoc.finding_id, {})
            if assoc.disease_id in per_finding:
                raise IntegrityError(
                    f"duplicate association ({assoc.finding_id!r}, {assoc.disease_id!r})")
            per_finding[assoc.disease_id] = assoc

        for group, members in self.exclusion_groups.items():
            if len(members) < 2:
                raise IntegrityError(
                    f"exclusion group {group!r} has a single member; groups need >= 2")

        self._askable_ids = sorted(
            fid for fid, f in self.findings.items() if not f.is_demographic)

    # -- lookups ------------------------------------------------------------

    def association(self, finding_id: str, disease_id: str) -> Optional[Association]:
        return self.assoc_by_finding.get(finding_id, {}).get(disease_id)

    def askable_finding_ids(self) -> list[str]:
        """Non-demographic finding ids, sorted for deterministic iteration."""
        return list(self._askable_ids)

    def finding_by_name(self, name: str) -> Optional[Finding]:
        for finding in self.findings.values():
            if finding.name == name:
                return finding
        return None

    def require_finding(self, finding_id: str) -> Finding:
        try:
            return self.findings[finding_id]
        except KeyError:
            raise NotFoundError(f"unknown finding {finding_id!r}") from None

    def require_disease(self, disease_id: str) -> Disease:
        try:
            return self.diseases[disease_id]
        except KeyError:
            raise NotFoundError(f"unknown disease {disease_id!r}") from None


# -- loading -----------------------------------------------------------------

_REQUIRED_FIELDS = {
    "disease": ("id", "name"),
    "finding": ("id", "name", "expert_question"),
    "assoc": ("finding_id", "disease_id", "es", "tf"),
}


def _schema_error(line_no: int, line: str, why: str) -> SchemaError:
    return SchemaError(f"line {line_no}: {why} in record {line.strip()!r}")


def parse_kb_records(lines: Iterable[str]) -> tuple[list[Disease], list[Finding], list[Association]]:
    diseases: list[Disease] = []
    findings: list[Finding] = []
    associations: list[Association] = []
    for line_no, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            record = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise _schema_error(line_no, line, f"invalid JSON ({exc.msg})") from None
        if not isinstance(record, dict):
            raise _schema_error(line_no, line, "record is not an object")
        kind = record.get("kind")
        if kind not in _REQUIRED_FIELDS:
            raise _schema_error(line_no, line, f"unknown kind {kind!r}")
        missing = [key for key in _REQUIRED_FIELDS[kind] if key not in record]
        if missing:
            raise _schema_error(line_no, line, f"missing field(s) {missing}")

        if kind == "disease":
            if not record["id"] or not record["name"]:
                raise _schema_error(line_no, line, "empty id or name")
            diseases.append(Disease(id=str(record["id"]), name=str(record["name"])))
        elif kind == "finding":
            if not record["id"] or not record["name"] or not record["expert_question"]:
                raise _schema_error(line_no, line, "empty id, name or expert_question")
            findings.append(Finding(
                id=str(record["id"]),
                name=str(record["name"]),
                expert_question=str(record["expert_question"]),
                is_demographic=bool(record.get("is_demographic", False)),
                exclusion_group=record.get("exclusion_group"),
            ))
        else:
            es, tf = record["es"], record["tf"]
            if not isinstance(es, int) or isinstance(es, bool) or not 0 <= es <= 5:
                raise _schema_error(line_no, line, f"es must be an integer in 0..5, got {es!r}")
            if not isinstance(tf, int) or isinstance(tf, bool) or not 1 <= tf <= 5:
                raise _schema_error(line_no, line, f"tf must be an integer in 1..5, got {tf!r}")
            associations.append(Association(
                finding_id=str(record["finding_id"]),
                disease_id=str(record["disease_id"]),
                es=es, tf=tf,
            ))
    return diseases, findings, associations


def load_kb(source) -> KnowledgeBase:
    """Load a knowledge base from a path, a string of records, or an open file.

    Strings are treated as inline content when they look like records (start
    with '{' or '#', or span multiple lines) and as paths otherwise.
    """
    if isinstance(source, Path):
        text_lines = source.read_text(encoding="utf-8").splitlines()
    elif isinstance(source, str):
        stripped = source.lstrip()
        if "\n" in source or stripped.startswith(("{", "#")):
            text_lines = source.splitlines()
        else:
            text_lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        text_lines = [line.rstrip("\n") for line in source]
    return KnowledgeBase(*parse_kb_records(text_lines))


def dump_kb(kb: KnowledgeBase) -> str:
    """Inverse of load_kb for KBs built in memory."""
    out = []
    for disease in kb.diseases.values():
        out.append(json.dumps({"kind": "disease", "id": disease.id, "name": disease.name}))
    for finding in kb.findings.values():
        record = {
            "kind": "finding", "id": finding.id, "name": finding.name,
            "expert_question": finding.expert_question,
            "is_demographic": finding.is_demographic,
        }
        if finding.exclusion_group is not None:
            record["exclusion_group"] = finding.exclusion_group
        out.append(json.dumps(record))
    for per_finding in kb.assoc_by_finding.values():
        for assoc in per_finding.values():
            out.append(json.dumps({
                "kind": "assoc", "finding_id": assoc.finding_id,
                "disease_id": assoc.disease_id, "es": assoc.es, "tf": assoc.tf,
            }))
    return "\n".join(out) + "\n"


# -- scoring -----------------------------------------------------------------

def _check_assertions(kb: KnowledgeBase, assertions: Iterable[Assertion]) -> list[Assertion]:
    checked: list[Assertion] = []
    seen: set[str] = set()
    for assertion in assertions:
        if assertion.finding_id not in kb.findings:
            raise ContractError(f"assertion references unknown finding {assertion.finding_id!r}")
        if assertion.finding_id in seen:
            raise ContractError(f"finding {assertion.finding_id!r} asserted twice")
        seen.add(assertion.finding_id)
        checked.append(assertion)
    return checked


def disease_score(kb: KnowledgeBase, assertions: Iterable[Assertion], disease_id: str) -> float:
    """Sum of es over present findings minus sum of tf over absent ones.

    Finding/disease pairs with no association contribute zero either way.
    """
    kb.require_disease(disease_id)
    total = 0.0
    for assertion in _check_assertions(kb, assertions):
        assoc = kb.association(assertion.finding_id, disease_id)
        if assoc is None:
            continue
        if assertion.is_present:
            total += assoc.es
        else:
            total -= assoc.tf
    return total


def differential(kb: KnowledgeBase, assertions: Iterable[Assertion],
                 temperature: float = DEFAULT_TEMPERATURE) -> DifferentialDiagnosis:
    """Rank every disease by raw score and attach softmax probabilities."""
    if not kb.diseases:
        raise ContractError("knowledge base has no diseases")
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    checked = _check_assertions(kb, assertions)
    scores = {did: disease_score(kb, checked, did) for did in kb.diseases}
    # Stable softmax: shift by the max before exponentiating.
    peak = max(scores.values())
    weights = {did: math.exp((s - peak) / temperature) for did, s in scores.items()}
    total = sum(weights.values())
    entries = tuple(
        DifferentialEntry(disease_id=did, raw_score=scores[did],
                          probability=weights[did] / total)
        for did in sorted(scores, key=lambda d: (-scores[d], d))
    )
    return DifferentialDiagnosis(entries=entries)


def margin(dd: DifferentialDiagnosis) -> float:
    """Raw-score gap between the two leading diseases; +inf for a single one."""
    if not dd.entries:
        raise ContractError("empty differential")
    if len(dd.entries) == 1:
        return math.inf
    return dd.entries[0].raw_score - dd.entries[1].raw_score


def excluded_findings(kb: KnowledgeBase, assertions: Iterable[Assertion]) -> set[str]:
    """Findings ruled out because an exclusion-group partner is present."""
    asserted = {a.finding_id for a in assertions}
    out: set[str] = set()
    for assertion in assertions:
        if not assertion.is_present:
            continue
        group = kb.findings[assertion.finding_id].exclusion_group
        if group is not None:
            out |= kb.exclusion_groups[group]
    return out - asserted


def next_finding(kb: KnowledgeBase, assertions: Iterable[Assertion],
                 dd: DifferentialDiagnosis) -> Optional[str]:
    """Most valuable finding to ask about next, or None when none remain.

    Value of finding f is the expectation of es(f, d) under the differential.
    Candidates exclude already-asserted, excluded and demographic findings.
    Ties break on ascending finding id.
    """
    checked = _check_assertions(kb, assertions)
    asserted = {a.finding_id for a in checked}
    blocked = excluded_findings(kb, checked)
    probabilities = {entry.disease_id: entry.probability for entry in dd.entries}

    best_id: Optional[str] = None
    best_value = -math.inf
    for fid in kb.askable_finding_ids():
        if fid in asserted or fid in blocked:
            continue
        value = sum(
            assoc.es * probabilities.get(assoc.disease_id, 0.0)
            for assoc in kb.assoc_by_finding.get(fid, {}).values()
        )
        if value > best_value:
            best_id, best_value = fid, value
    return best_id
