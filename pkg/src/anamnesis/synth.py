"""Synthetic fixtures: demo knowledge bases and labeled text corpora.

Real association tables and doctor-edit logs are proprietary, so tests and
demo scripts run on generated stand-ins.  The shapes matter, the medicine
does not: the demo KB is tuned so that confident differentials are reachable
within a handful of questions, and the text corpora carry class signal in
exactly one context source each, which keeps classifier behaviour easy to
reason about.
"""
from __future__ import annotations

import random

from .emotes import CLASS_ORDER, ContextTriple, EmoteDatasetRow, EmoteLexicon
from .kb import Association, Disease, Finding, KnowledgeBase


def build_demo_kb(n_diseases: int = 10, signatures_per_disease: int = 6,
                  shared_findings: int = 4) -> KnowledgeBase:
    """A KB where repeated questioning actually separates diseases.

    Each disease gets signature findings with high evoking strength for it
    (es=5, tf=1) and a tf-only echo (es=0, tf=5) on every other disease, so
    a present signature lifts its owner by 5 and an absent one sinks the
    competition by 4 net: the margin widens whichever way the coin lands,
    which keeps acceptance roughly polarity-neutral.  Shared findings touch
    every disease identically, adding early ambiguity without moving the
    margin.  The last two signatures of each disease form an exclusion pair;
    two demographic findings are present but never askable.
    """
    diseases = [Disease(f"d{i:02d}", f"condition {i:02d}") for i in range(n_diseases)]
    findings: list[Finding] = []
    associations: list[Association] = []

    for i in range(n_diseases):
        for j in range(signatures_per_disease):
            fid = f"s{i:02d}{j}"
            group = None
            if signatures_per_disease >= 2 and j >= signatures_per_disease - 2:
                group = f"x{i:02d}"  # last two signatures are mutually exclusive
            findings.append(Finding(
                id=fid,
                name=f"sign {i:02d}-{j}",
                expert_question=f"Do you have sign {i:02d}-{j}?",
                exclusion_group=group,
            ))
            for d in range(n_diseases):
                if d == i:
                    associations.append(Association(fid, f"d{d:02d}", es=5, tf=1))
                else:
                    associations.append(Association(fid, f"d{d:02d}", es=0, tf=5))

    for k in range(shared_findings):
        fid = f"g{k}"
        findings.append(Finding(
            id=fid,
            name=f"general symptom {k}",
            expert_question=f"Do you have general symptom {k}?",
        ))
        for d in range(n_diseases):
            associations.append(Association(fid, f"d{d:02d}", es=2, tf=2))

    for label in ("adult", "senior"):
        fid = f"demo_{label}"
        findings.append(Finding(
            id=fid,
            name=f"{label} age group",
            expert_question=f"Are you in the {label} age group?",
            is_demographic=True,
        ))
        associations.append(Association(fid, "d00", es=3, tf=1))

    return KnowledgeBase(diseases, findings, associations)


# -- labeled emote corpora -----------------------------------------------------

_NEUTRAL_QUESTIONS = (
    "Do you have a fever?",
    "Are you sneezing a lot?",
    "How long has this been going on?",
    "Does it get worse at night?",
    "Have you taken any medication?",
    "Is anyone else at home unwell?",
    "Did the symptoms come on suddenly?",
    "Have you traveled recently?",
)

_NEUTRAL_RESPONSES = (
    "it started last week",
    "mostly in the evening",
    "only when i walk",
    "about twice a day",
    "not that i noticed",
    "hard to say really",
    "it comes and goes",
    "mainly after meals",
)

_AFFIRMATIVE_RESPONSES = (
    "yes",
    "yes i do",
    "yeah definitely",
    "yep that is right",
    "sure yes",
    "correct yes",
)

_EMPATHY_RESPONSES = (
    "the pain is terrible",
    "i feel awful all the time",
    "it hurts so badly i cry",
    "i am really scared about this",
    "it is unbearable at night",
    "i feel miserable and exhausted",
)

_NEUTRAL_FINDINGS = (
    "headache",
    "sore throat",
    "runny nose",
    "lower back pain",
    "itchy eyes",
    "mild dizziness",
    "dry cough",
    "stuffy ears",
)

_SENSITIVE_FINDINGS = (
    "number of sexual partners",
    "recreational drug use",
    "heavy alcohol consumption",
    "unprotected intercourse",
    "genital discomfort",
)

# Applied to findings of every class, so they add rank without adding signal.
_FINDING_QUALIFIERS = (
    "", "occasional", "persistent", "recent", "intermittent",
    "recurring", "new", "ongoing",
)

_FILLER = (
    "well", "so", "um", "kind", "of", "a", "bit", "maybe", "around", "since",
    "morning", "afternoon", "later", "earlier", "slightly", "somewhat",
    "today", "yesterday", "week", "month", "while", "often", "rarely",
    "sometimes", "mostly", "nearly", "almost", "quite", "rather", "fairly",
)


def _pad(rng: random.Random, text: str, n_filler: int) -> str:
    extra = " ".join(rng.choice(_FILLER) for _ in range(n_filler))
    return f"{text} {extra}" if extra else text


def make_emotion_corpus(n: int, seed: int, lexicon: EmoteLexicon,
                        class_fractions: dict[str, float] | None = None,
                        ambiguous_fraction: float = 0.0) -> list[EmoteDatasetRow]:
    """Labeled rows where each non-none class has one dedicated signal source.

    empathy lives in the patient response, apology in the target finding,
    affirmative in the response's leading yes-token; none rows are neutral
    everywhere.  ambiguous_fraction of minority rows swaps the signal for a
    neutral surface, which caps how well any model can recall them.
    """
    fractions = class_fractions or {
        "none": 0.25, "affirmative": 0.25, "empathy": 0.25, "apology": 0.25}
    if abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise ValueError("class fractions must sum to 1")
    rng = random.Random(seed)
    counts = {code: int(round(n * fractions[code])) for code in CLASS_ORDER}
    while sum(counts.values()) < n:
        counts["none"] += 1
    while sum(counts.values()) > n:
        counts["none"] -= 1

    rows: list[EmoteDatasetRow] = []
    for code in CLASS_ORDER:
        for _ in range(counts[code]):
            prevq = _pad(rng, rng.choice(_NEUTRAL_QUESTIONS), rng.randint(0, 2))
            muted = code != "none" and rng.random() < ambiguous_fraction
            if code == "empathy" and not muted:
                response = _pad(rng, rng.choice(_EMPATHY_RESPONSES), rng.randint(0, 1))
            elif code == "affirmative" and not muted:
                response = _pad(rng, rng.choice(_AFFIRMATIVE_RESPONSES), rng.randint(0, 1))
            else:
                response = _pad(rng, rng.choice(_NEUTRAL_RESPONSES), rng.randint(0, 2))
            if code == "apology" and not muted:
                base = rng.choice(_SENSITIVE_FINDINGS)
            else:
                base = rng.choice(_NEUTRAL_FINDINGS)
            finding = f"{rng.choice(_FINDING_QUALIFIERS)} {base}".strip()
            phrase = "" if code == "none" else lexicon.sample(code, rng)
            rows.append(EmoteDatasetRow(
                context=ContextTriple(prevq, response, finding),
                emote_phrase=phrase,
                code=code,
            ))
    rng.shuffle(rows)
    return rows
