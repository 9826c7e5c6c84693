"""Evaluation harness: paired A/B runs, rating aggregation, rating sheets.

Human judgments are ingested, never synthesized.  This module reproduces the
protocol mechanics — driving two engines with one shared answer stream,
tallying preference points both raw and with per-case majority voting, and
assembling anonymized 1-to-5 rating sheets — plus the report arithmetic.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .dialogue import Conclusion, DialogueEngine, NextQuestion, PatientProfile
from .emotes import CLASS_ORDER
from .errors import ContractError
from .simulator import ClinicalCase

SIDES = ("a", "b")
OUTCOMES = ("a", "b", "equal")

AXES = ("medical_consistency", "fluency", "empathy")
SCORE_MIN, SCORE_MAX = 1, 5

DEFAULT_CONFIDENCE_THRESHOLD = 0.8
DEFAULT_PER_CLASS = 25

_NO_SIGNIFICANCE_NOTE = (
    "significance testing: not performed (counts and means only)")


def percent(numerator: int, denominator: int) -> float:
    """Percentage at one decimal place, exact halves rounding up."""
    if denominator <= 0:
        raise ContractError("percentage denominator must be positive")
    ratio = Decimal(numerator) * 100 / Decimal(denominator)
    return float(ratio.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def mean_score(values: Sequence[float]) -> float:
    """Mean at three decimal places, exact halves rounding up."""
    if not values:
        raise ContractError("cannot average an empty score list")
    total = Decimal(0)
    for value in values:
        total += Decimal(str(value))
    return float((total / len(values)).quantize(Decimal("0.001"),
                                                rounding=ROUND_HALF_UP))


# -- preference records --------------------------------------------------------


@dataclass(frozen=True)
class RatingRecord:
    """One rater's preference between two anonymized models on one case.

    Exactly one side gets the point, unless both received the same score —
    which is allowed only with an explanatory comment.
    """

    rater_id: str
    case_ref: str
    points_a: int
    points_b: int
    comment: str = ""

    def __post_init__(self):
        if not self.rater_id:
            raise ContractError("rater_id must be non-empty")
        if self.points_a not in (0, 1) or self.points_b not in (0, 1):
            raise ContractError("points must be 0 or 1")
        if self.points_a == self.points_b and not self.comment.strip():
            raise ContractError(
                "equal ratings require a comment explaining the decision")

    @property
    def outcome(self) -> str:
        if self.points_a > self.points_b:
            return "a"
        if self.points_b > self.points_a:
            return "b"
        return "equal"


@dataclass(frozen=True)
class RatingSummary:
    record_count: int
    case_count: int
    totals: dict[str, int]              # column sums over all records
    exclusive: dict[str, int]           # per-record outcome counts
    exclusive_pct: dict[str, float]
    majority_totals: dict[str, int]     # per-case majority of each column
    majority_exclusive: dict[str, int]  # per-case majority outcome counts
    majority_pct: dict[str, float]


def _majority_bit(bits: Sequence[int]) -> int:
    """1 iff strictly more ones than zeros (even splits yield 0)."""
    ones = sum(bits)
    return 1 if ones * 2 > len(bits) else 0


def _majority_outcome(outcomes: Sequence[str]) -> str:
    counts = {name: outcomes.count(name) for name in OUTCOMES}
    best = max(counts.values())
    leaders = [name for name in OUTCOMES if counts[name] == best]
    return leaders[0] if len(leaders) == 1 else "equal"


def aggregate_ratings(records: Iterable[RatingRecord]) -> RatingSummary:
    """Tally preference records raw and with per-case majority voting.

    Totals are plain column sums.  The mutually-exclusive split counts each
    record as an a-win, b-win, or equal.  Majority voting reduces each case to
    one vote per column (strict majority of the 0/1 points) and one outcome
    (plurality of the per-rater outcomes, ties reported as equal).  All counts
    are independent of record order.
    """
    records = list(records)
    if not records:
        raise ContractError("no rating records to aggregate")
    for record in records:
        if not isinstance(record, RatingRecord):
            raise ContractError(f"not a rating record: {record!r}")

    totals = {"a": sum(r.points_a for r in records),
              "b": sum(r.points_b for r in records)}
    exclusive = {name: 0 for name in OUTCOMES}
    for record in records:
        exclusive[record.outcome] += 1
    n = len(records)
    exclusive_pct = {name: percent(exclusive[name], n) for name in OUTCOMES}

    by_case: dict[str, list[RatingRecord]] = {}
    for record in records:
        by_case.setdefault(record.case_ref, []).append(record)

    majority_totals = {"a": 0, "b": 0}
    majority_exclusive = {name: 0 for name in OUTCOMES}
    for case_records in by_case.values():
        majority_totals["a"] += _majority_bit([r.points_a for r in case_records])
        majority_totals["b"] += _majority_bit([r.points_b for r in case_records])
        majority_exclusive[_majority_outcome(
            [r.outcome for r in case_records])] += 1
    cases = len(by_case)
    majority_pct = {name: percent(majority_exclusive[name], cases)
                    for name in OUTCOMES}

    return RatingSummary(
        record_count=n, case_count=cases, totals=totals, exclusive=exclusive,
        exclusive_pct=exclusive_pct, majority_totals=majority_totals,
        majority_exclusive=majority_exclusive, majority_pct=majority_pct)


def render_rating_report(summary: RatingSummary) -> str:
    lines = [
        "paired preference evaluation",
        f"records: {summary.record_count}   cases: {summary.case_count}",
        "",
        f"{'':18s}{'A':>8s}{'B':>8s}{'Equal':>8s}",
        (f"{'total points':18s}{summary.totals['a']:>8d}"
         f"{summary.totals['b']:>8d}{'-':>8s}"),
        (f"{'exclusive':18s}{summary.exclusive['a']:>8d}"
         f"{summary.exclusive['b']:>8d}{summary.exclusive['equal']:>8d}"),
        (f"{'':18s}{summary.exclusive_pct['a']:>7.1f}%"
         f"{summary.exclusive_pct['b']:>7.1f}%"
         f"{summary.exclusive_pct['equal']:>7.1f}%"),
        "",
        "with per-case majority voting",
        (f"{'total points':18s}{summary.majority_totals['a']:>8d}"
         f"{summary.majority_totals['b']:>8d}{'-':>8s}"),
        (f"{'exclusive':18s}{summary.majority_exclusive['a']:>8d}"
         f"{summary.majority_exclusive['b']:>8d}"
         f"{summary.majority_exclusive['equal']:>8d}"),
        (f"{'':18s}{summary.majority_pct['a']:>7.1f}%"
         f"{summary.majority_pct['b']:>7.1f}%"
         f"{summary.majority_pct['equal']:>7.1f}%"),
        "",
        _NO_SIGNIFICANCE_NOTE,
    ]
    return "\n".join(lines) + "\n"


def write_records(path, records: Iterable[RatingRecord]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps({
                "rater_id": record.rater_id, "case_ref": record.case_ref,
                "points_a": record.points_a, "points_b": record.points_b,
                "comment": record.comment,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def read_records(path) -> list[RatingRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(RatingRecord(**json.loads(line)))
    return records


# -- paired conversations -------------------------------------------------------


@dataclass(frozen=True)
class TranscriptTurn:
    question: str
    finding_id: str
    emote: str
    answer: Optional[str]
    polarity: Optional[str]


@dataclass(frozen=True)
class PairedTranscript:
    """Two engines driven by one shared answer stream on the same case."""

    case_ref: int
    variants: dict[str, str]                       # side -> engine variant
    transcripts: dict[str, tuple[TranscriptTurn, ...]]
    answers: tuple[str, ...]                       # the shared stream, in order
    conclusions: dict[str, str]                    # side -> termination reason
    question_counts: dict[str, int]

    @property
    def diverged(self) -> bool:
        return self.question_counts["a"] != self.question_counts["b"]


def run_paired(engine_a: DialogueEngine, engine_b: DialogueEngine,
               scripted_answers: Sequence[str], case: ClinicalCase,
               ) -> PairedTranscript:
    """Drive both engines with the same answers until both conclude.

    Answers are consumed step-by-step: at step i every still-active engine
    receives scripted_answers[i].  An engine that concludes early simply stops
    consuming; the difference in question counts is recorded, not fatal.  A
    script too short to conclude both engines is a contract error.
    """
    engines = {"a": engine_a, "b": engine_b}
    profile = PatientProfile(age_band=case.age_band, gender=case.gender)
    rfe_name = engine_a.kb.require_finding(case.rfe).name

    sessions: dict[str, int] = {}
    active: dict[str, bool] = {}
    conclusions: dict[str, str] = {}
    for side, engine in engines.items():
        session_id, first = engine.start_conversation(profile, rfe_name)
        sessions[side] = session_id
        if isinstance(first, Conclusion):
            active[side] = False
            conclusions[side] = first.reason
        else:
            active[side] = True

    consumed: list[str] = []
    step = 0
    while any(active.values()):
        if step >= len(scripted_answers):
            raise ContractError(
                f"scripted answers exhausted after {step} steps with an "
                "engine still active")
        answer = scripted_answers[step]
        consumed.append(answer)
        for side in SIDES:
            if not active[side]:
                continue
            outcome = engines[side].submit_answer(sessions[side], answer)
            if isinstance(outcome, Conclusion):
                active[side] = False
                conclusions[side] = outcome.reason
        step += 1

    transcripts = {}
    counts = {}
    for side, engine in engines.items():
        state = engine.get_state(sessions[side])
        transcripts[side] = tuple(
            TranscriptTurn(question=turn.question,
                           finding_id=turn.codes.next_finding,
                           emote=turn.codes.emote,
                           answer=turn.raw_answer, polarity=turn.polarity)
            for turn in state.turns)
        counts[side] = state.question_count

    return PairedTranscript(
        case_ref=case.id,
        variants={side: engines[side].default_config.variant for side in SIDES},
        transcripts=transcripts, answers=tuple(consumed),
        conclusions=conclusions, question_counts=counts)


# -- rating sheets ---------------------------------------------------------------


@dataclass(frozen=True)
class SheetCandidate:
    """A classifier-scored instance with one candidate question per model."""

    ref: str
    predicted_code: str
    probability: float
    questions: Mapping[str, str]
    context: str = ""


@dataclass(frozen=True)
class SheetRow:
    ref: str
    context: str
    predicted_code: str
    questions: dict[str, str]                 # column label -> question text
    scores: dict[str, dict[str, Optional[int]]] = field(default_factory=dict)


@dataclass(frozen=True)
class RatingSheet:
    rows: tuple[SheetRow, ...]
    labels: tuple[str, ...]                   # anonymized column labels
    key: dict[str, str]                       # label -> model name (bijection)
    seed: int
    threshold: float
    per_class: int


def build_rating_sheet(candidates: Iterable[SheetCandidate],
                       models: Sequence[str],
                       per_class: int = DEFAULT_PER_CLASS,
                       threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
                       seed: int = 0) -> RatingSheet:
    """Stratified, confidence-filtered, anonymized sheet of blank ratings.

    Keeps candidates whose predicted-class probability exceeds the threshold,
    samples per_class instances per emote class (warning on shortfall), maps
    models to anonymous column labels, and shuffles row order.  The seed and
    the label->model key are recorded so the sheet is reproducible and
    de-anonymizable.
    """
    models = tuple(models)
    if len(models) < 1:
        raise ContractError("at least one model column is required")
    if len(set(models)) != len(models):
        raise ContractError("model names must be distinct")
    candidates = list(candidates)
    for candidate in candidates:
        missing = [m for m in models if m not in candidate.questions]
        if missing:
            raise ContractError(
                f"candidate {candidate.ref!r} lacks questions for {missing}")

    rng = random.Random(seed)
    qualifying = [c for c in candidates if c.probability > threshold]
    chosen: list[SheetCandidate] = []
    for code in CLASS_ORDER:
        pool = [c for c in qualifying if c.predicted_code == code]
        if len(pool) < per_class:
            warnings.warn(
                f"class {code!r}: only {len(pool)} qualifying instances "
                f"(wanted {per_class})")
            chosen.extend(pool)
        else:
            chosen.extend(rng.sample(pool, per_class))

    labels = tuple(f"Model {chr(ord('A') + i)}" for i in range(len(models)))
    shuffled = list(models)
    rng.shuffle(shuffled)
    key = dict(zip(labels, shuffled))

    rows = []
    for candidate in chosen:
        rows.append(SheetRow(
            ref=candidate.ref, context=candidate.context,
            predicted_code=candidate.predicted_code,
            questions={label: candidate.questions[key[label]]
                       for label in labels},
            scores={label: {axis: None for axis in AXES} for label in labels}))
    rng.shuffle(rows)
    return RatingSheet(rows=tuple(rows), labels=labels, key=key, seed=seed,
                       threshold=threshold, per_class=per_class)


def fill_score(sheet: RatingSheet, row_index: int, label: str, axis: str,
               score: int) -> RatingSheet:
    """Return a copy of the sheet with one cell filled."""
    if not (SCORE_MIN <= score <= SCORE_MAX) or int(score) != score:
        raise ContractError(
            f"scores are integers {SCORE_MIN}..{SCORE_MAX}, got {score!r}")
    if label not in sheet.labels:
        raise ContractError(f"unknown column {label!r}")
    if axis not in AXES:
        raise ContractError(f"unknown axis {axis!r}")
    rows = list(sheet.rows)
    row = rows[row_index]
    scores = {lab: dict(per_axis) for lab, per_axis in row.scores.items()}
    scores[label][axis] = int(score)
    rows[row_index] = replace(row, scores=scores)
    return replace(sheet, rows=tuple(rows))


def summarize_sheet(sheet: RatingSheet) -> dict[str, dict[str, float]]:
    """Mean score per (model, axis), de-anonymized via the sheet key.

    Unfilled cells are skipped; a (model, axis) with no filled cells is a
    contract error.
    """
    collected: dict[str, dict[str, list[int]]] = {
        model: {axis: [] for axis in AXES} for model in sheet.key.values()}
    for row in sheet.rows:
        for label in sheet.labels:
            model = sheet.key[label]
            for axis in AXES:
                value = row.scores.get(label, {}).get(axis)
                if value is None:
                    continue
                if not (SCORE_MIN <= value <= SCORE_MAX):
                    raise ContractError(
                        f"score out of range in row {row.ref!r}: {value!r}")
                collected[model][axis].append(value)
    summary: dict[str, dict[str, float]] = {}
    for model, per_axis in collected.items():
        summary[model] = {}
        for axis, values in per_axis.items():
            if not values:
                raise ContractError(
                    f"no filled scores for model {model!r}, axis {axis!r}")
            summary[model][axis] = mean_score(values)
    return summary


def render_sheet_summary(summary: dict[str, dict[str, float]]) -> str:
    header = f"{'model':24s}" + "".join(f"{axis:>22s}" for axis in AXES)
    lines = [header]
    for model in sorted(summary):
        lines.append(f"{model:24s}" + "".join(
            f"{summary[model][axis]:>22.3f}" for axis in AXES))
    lines.append("")
    lines.append(_NO_SIGNIFICANCE_NOTE)
    return "\n".join(lines) + "\n"


def write_sheet(path, sheet: RatingSheet) -> None:
    payload = {
        "labels": list(sheet.labels), "key": sheet.key, "seed": sheet.seed,
        "threshold": sheet.threshold, "per_class": sheet.per_class,
    }
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"header": payload}, ensure_ascii=False,
                                sort_keys=True) + "\n")
        for row in sheet.rows:
            handle.write(json.dumps({
                "ref": row.ref, "context": row.context,
                "predicted_code": row.predicted_code,
                "questions": row.questions, "scores": row.scores,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def read_sheet(path) -> RatingSheet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ContractError("empty sheet file")
    header = json.loads(lines[0])["header"]
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        data = json.loads(line)
        rows.append(SheetRow(
            ref=data["ref"], context=data["context"],
            predicted_code=data["predicted_code"],
            questions=data["questions"], scores=data["scores"]))
    return RatingSheet(rows=tuple(rows), labels=tuple(header["labels"]),
                       key=header["key"], seed=header["seed"],
                       threshold=header["threshold"],
                       per_class=header["per_class"])
