"""Synthetic clinical cases driven by the question-selection policy.

A case starts from a random demographic profile and a random reason for
encounter, then repeatedly asks the policy for the next finding and flips a
biased coin for its polarity.  The loop stops at a target length, at a
confident differential, or when no askable finding remains; only cases whose
final margin clears the threshold are kept.

Draw order per case is fixed (age, gender, rfe, target length, then one draw
per finding) so a seed pins the whole dataset byte for byte.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import ContractError, ExhaustionError, SchemaError
from .kb import (
    ABSENT,
    PRESENT,
    Assertion,
    KnowledgeBase,
    differential,
    margin,
    next_finding,
)

DEFAULT_AGE_BANDS = (
    "child (under 18 yrs)",
    "young adult (18 to 40 yrs)",
    "middle-aged adult (40 to 65 yrs)",
    "older adult (over 65 yrs)",
)
DEFAULT_GENDERS = ("female", "male")

MAX_CASE_FINDINGS = 20  # hard cap on |findings| regardless of configuration


@dataclass(frozen=True)
class SimulatorConfig:
    margin_threshold: float = 20.0
    min_findings: int = 5
    max_findings: int = 20
    p_absent: float = 0.6
    seed: int = 0
    age_bands: tuple[str, ...] = DEFAULT_AGE_BANDS
    genders: tuple[str, ...] = DEFAULT_GENDERS

    def __post_init__(self):
        if not (1 <= self.min_findings <= self.max_findings):
            raise ContractError("need 1 <= min_findings <= max_findings")
        if not (0.0 <= self.p_absent <= 1.0):
            raise ContractError("p_absent must be a probability")
        if not self.age_bands or not self.genders:
            raise ContractError("age_bands and genders must be non-empty")


@dataclass(frozen=True)
class ClinicalCase:
    id: int
    age_band: str
    gender: str
    rfe: str  # finding id, always asserted present
    findings: tuple[Assertion, ...]  # in question order, excluding the rfe
    final_margin: float

    def all_assertions(self) -> list[Assertion]:
        return [Assertion(self.rfe, PRESENT), *self.findings]


@dataclass
class SimulationStats:
    attempts: int = 0
    accepted: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


def simulate_case(kb: KnowledgeBase, config: SimulatorConfig,
                  rng: random.Random, case_id: int = 0) -> Optional[ClinicalCase]:
    """One attempt; returns the case or None when the margin check fails."""
    askable = kb.askable_finding_ids()
    if not askable:
        raise ContractError("knowledge base has no non-demographic findings")

    age_band = rng.choice(config.age_bands)
    gender = rng.choice(config.genders)
    rfe = rng.choice(askable)
    target_length = rng.randint(config.min_findings, config.max_findings)

    assertions = [Assertion(rfe, PRESENT)]
    findings: list[Assertion] = []
    while True:
        dd = differential(kb, assertions)
        current_margin = margin(dd)
        if len(findings) >= target_length or current_margin >= config.margin_threshold:
            break
        fid = next_finding(kb, assertions, dd)
        if fid is None:
            break
        polarity = ABSENT if rng.random() < config.p_absent else PRESENT
        assertion = Assertion(fid, polarity)
        assertions.append(assertion)
        findings.append(assertion)

    if current_margin < config.margin_threshold:
        return None
    return ClinicalCase(
        id=case_id, age_band=age_band, gender=gender, rfe=rfe,
        findings=tuple(findings), final_margin=current_margin,
    )


def simulate_dataset(kb: KnowledgeBase, config: SimulatorConfig, n_accepted: int,
                     max_attempts: Optional[int] = None,
                     stats: Optional[SimulationStats] = None) -> list[ClinicalCase]:
    """Accepted cases with sequential ids, rejections discarded but counted.

    Each attempt owns an rng stream derived from (seed, attempt index), so
    attempt outcomes are independent of batching and could run in parallel.
    """
    if n_accepted < 0:
        raise ContractError("n_accepted must be >= 0")
    if max_attempts is None:
        max_attempts = max(1000, 100 * n_accepted)
    stats = stats if stats is not None else SimulationStats()

    cases: list[ClinicalCase] = []
    for attempt in range(max_attempts):
        if len(cases) >= n_accepted:
            break
        rng = random.Random(f"{config.seed}:{attempt}")
        stats.attempts += 1
        case = simulate_case(kb, config, rng, case_id=len(cases))
        if case is not None:
            stats.accepted += 1
            cases.append(case)
    if len(cases) < n_accepted:
        raise ExhaustionError(
            f"only {len(cases)} of {n_accepted} cases accepted "
            f"within {max_attempts} attempts")
    return cases


def validate_case(kb: KnowledgeBase, case: ClinicalCase) -> list[str]:
    """All invariant violations for a case, empty when it is sound."""
    violations: list[str] = []
    if case.rfe not in kb.findings:
        violations.append(f"rfe {case.rfe!r} not in knowledge base")

    seen: set[str] = set()
    present_by_group: dict[str, list[str]] = {}
    for assertion in case.all_assertions():
        fid = assertion.finding_id
        if fid not in kb.findings:
            violations.append(f"finding {fid!r} not in knowledge base")
            continue
        if fid in seen:
            violations.append(f"finding {fid!r} asserted twice")
        seen.add(fid)
        group = kb.findings[fid].exclusion_group
        if assertion.is_present and group is not None:
            present_by_group.setdefault(group, []).append(fid)
    for group, members in present_by_group.items():
        if len(members) > 1:
            violations.append(
                f"exclusion group {group!r} violated by present findings {sorted(members)}")
    if len(case.findings) > MAX_CASE_FINDINGS:
        violations.append(
            f"{len(case.findings)} findings exceed the cap of {MAX_CASE_FINDINGS}")
    return violations


# -- case files ----------------------------------------------------------------

def _suffix(assertion: Assertion) -> str:
    return "+" if assertion.is_present else "-"


def case_to_record(case: ClinicalCase, kb: KnowledgeBase) -> dict:
    """Serializable record: names carry polarity as a +/- suffix."""
    return {
        "id": case.id,
        "age": [case.age_band],
        "gender": [case.gender],
        "RFE": [kb.require_finding(case.rfe).name + "+"],
        "findings": [
            kb.require_finding(a.finding_id).name + _suffix(a)
            for a in case.findings
        ],
        "final_margin": case.final_margin,
    }


def record_to_case(record: dict, kb: KnowledgeBase) -> ClinicalCase:
    by_name = {f.name: f.id for f in kb.findings.values()}

    def resolve(entry: str) -> Assertion:
        name, suffix = entry[:-1], entry[-1:]
        if suffix not in "+-" or name not in by_name:
            raise SchemaError(f"cannot resolve finding entry {entry!r}")
        return Assertion(by_name[name], PRESENT if suffix == "+" else ABSENT)

    try:
        rfe = resolve(record["RFE"][0])
        return ClinicalCase(
            id=int(record["id"]),
            age_band=record["age"][0],
            gender=record["gender"][0],
            rfe=rfe.finding_id,
            findings=tuple(resolve(entry) for entry in record["findings"]),
            final_margin=float(record["final_margin"]),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise SchemaError(f"malformed case record: {exc!r}") from None


def write_cases(cases: list[ClinicalCase], kb: KnowledgeBase, path) -> None:
    lines = [json.dumps(case_to_record(case, kb)) for case in cases]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_cases(path, kb: KnowledgeBase) -> list[ClinicalCase]:
    cases = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {line_no}: invalid JSON ({exc.msg})") from None
        cases.append(record_to_case(record, kb))
    return cases
