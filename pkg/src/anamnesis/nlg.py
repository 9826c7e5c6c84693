"""Question generation and conversation-dataset construction.

Four engine variants share one entry point: expert always emits the
knowledge-base question verbatim, paraphrase samples the validated serving
pool, emotive prepends a sampled emote phrase to a sampled paraphrase, and
external delegates to a remote generator whose output must pass a fuzzy
consistency check before it is served (falling back to emotive otherwise).

The prompt wire format is a single fielded line so that training data,
external requests, and replay logs all share one serialization:

    AGE=<band>|SEX=<g>|RFE=<name>|FINDINGS=<name+;name-...>|PREVQ=<text>|
    PREVA=<text>|NEXT=<finding_id>|EMOTE=<code>

Backslash, pipe, semicolon, and newline are escaped inside values, making
the format injective and parseable by a line scanner in any language.
"""

from __future__ import annotations

import json
import random
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

from .emotes import CLASS_ORDER, NONE, EmoteLexicon, check_code, sample_emote_phrase
from .errors import ContractError, ExternalServiceError, SchemaError
from .kb import PRESENT, KnowledgeBase
from .paraphrase import ParaphraseBank
from .simulator import ClinicalCase, validate_case
from .text import fuzzy_score

VARIANTS = ("expert", "paraphrase", "emotive", "external")

CONSISTENCY_THRESHOLD = 90
PROMPT_FIELDS = ("AGE", "SEX", "RFE", "FINDINGS", "PREVQ", "PREVA", "NEXT", "EMOTE")

_TERMINAL_PUNCTUATION = (".", "!", "?")


def check_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise ContractError(f"unknown engine variant {variant!r}; "
                            f"expected one of {', '.join(VARIANTS)}")
    return variant


@dataclass(frozen=True)
class ControlCodes:
    next_finding: str
    emote: str = NONE

    def __post_init__(self) -> None:
        if not self.next_finding:
            raise ContractError("next_finding must be non-empty")
        check_code(self.emote)


@dataclass(frozen=True)
class GenerationContext:
    age_band: str
    gender: str
    rfe: str
    prior_findings: tuple[tuple[str, bool], ...] = ()  # (finding name, is_present)
    previous_question: str = ""
    previous_response: str = ""


@dataclass(frozen=True)
class TrainingInstance:
    serialized_context: str
    target_text: str

    def __post_init__(self) -> None:
        fields = dict(_split_fields(self.serialized_context))
        if tuple(fields) != PROMPT_FIELDS:
            raise ContractError("serialized context is not a valid prompt line")
        if not self.target_text:
            raise ContractError("target text must be non-empty")


# -- wire format -----------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "|": "\\|", ";": "\\;", "\n": "\\n"}
_UNESCAPES = {"\\": "\\", "|": "|", ";": ";", "n": "\n"}


def escape_value(value: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in value)


def unescape_value(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\":
            if i + 1 >= len(value) or value[i + 1] not in _UNESCAPES:
                raise SchemaError(f"dangling escape in {value!r}")
            out.append(_UNESCAPES[value[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _split_unescaped(text: str, separator: str) -> list[str]:
    parts = []
    current = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            current.append(ch)
            current.append(text[i + 1])
            i += 2
            continue
        if ch == separator:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
        i += 1
    parts.append("".join(current))
    return parts


def _split_fields(line: str) -> list[tuple[str, str]]:
    fields = []
    for part in _split_unescaped(line, "|"):
        key, eq, value = part.partition("=")
        if not eq:
            raise SchemaError(f"prompt field without '=': {part!r}")
        fields.append((key, value))
    return fields


def render_prompt(context: GenerationContext, codes: ControlCodes) -> str:
    findings = ";".join(
        escape_value(name) + ("+" if present else "-")
        for name, present in context.prior_findings)
    parts = [
        f"AGE={escape_value(context.age_band)}",
        f"SEX={escape_value(context.gender)}",
        f"RFE={escape_value(context.rfe)}",
        f"FINDINGS={findings}",
        f"PREVQ={escape_value(context.previous_question)}",
        f"PREVA={escape_value(context.previous_response)}",
        f"NEXT={escape_value(codes.next_finding)}",
        f"EMOTE={escape_value(codes.emote)}",
    ]
    return "|".join(parts)


def parse_prompt(line: str) -> tuple[GenerationContext, ControlCodes]:
    fields = _split_fields(line)
    keys = tuple(key for key, _ in fields)
    if keys != PROMPT_FIELDS:
        raise SchemaError(f"expected fields {PROMPT_FIELDS}, got {keys}")
    values = dict(fields)
    prior: list[tuple[str, bool]] = []
    if values["FINDINGS"]:
        for item in _split_unescaped(values["FINDINGS"], ";"):
            if not item or item[-1] not in "+-":
                raise SchemaError(f"finding item without polarity: {item!r}")
            prior.append((unescape_value(item[:-1]), item[-1] == "+"))
    context = GenerationContext(
        age_band=unescape_value(values["AGE"]),
        gender=unescape_value(values["SEX"]),
        rfe=unescape_value(values["RFE"]),
        prior_findings=tuple(prior),
        previous_question=unescape_value(values["PREVQ"]),
        previous_response=unescape_value(values["PREVA"]),
    )
    codes = ControlCodes(next_finding=unescape_value(values["NEXT"]),
                         emote=unescape_value(values["EMOTE"]))
    return context, codes


# -- generation ------------------------------------------------------------------

def join_emote(phrase: str, question: str) -> str:
    """Prepend an emote phrase, closing it with a period when needed."""
    phrase = phrase.strip()
    if not phrase:
        return question
    if not phrase.endswith(_TERMINAL_PUNCTUATION):
        phrase += "."
    return f"{phrase} {question}"


def strip_emote_prefix(question: str, lexicon: EmoteLexicon) -> str:
    """Remove one leading lexicon phrase (and its closing punctuation)."""
    phrases = [phrase for _, phrase in lexicon.all_phrases()]
    for phrase in sorted(phrases, key=len, reverse=True):
        if question.startswith(phrase):
            rest = question[len(phrase):]
            return rest.lstrip(".!? ").strip() or question
    return question


def validate_consistency(question: str, finding_id: str, bank: ParaphraseBank,
                         lexicon: EmoteLexicon | None = None,
                         threshold: int = CONSISTENCY_THRESHOLD) -> bool:
    """Pass iff the question (minus any emote prefix) matches the serving pool."""
    stripped = strip_emote_prefix(question, lexicon) if lexicon else question
    pool = bank.serving_pool(finding_id)
    return max(fuzzy_score(stripped, member) for member in pool) >= threshold


Transport = Callable[[dict], dict]


class ExternalNlgClient:
    """Client for a remote question generator speaking the prompt format."""

    def __init__(self, endpoint: str, max_tokens: int = 60,
                 temperature: float = 0.7,
                 transport: Transport | None = None,
                 timeout: float = 10.0) -> None:
        self._endpoint = endpoint
        self._max_tokens = max_tokens
        self._temperature = temperature
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
                f"generator at {self._endpoint} failed: {exc}") from exc

    def generate(self, prompt: str) -> str:
        response = self._transport({
            "prompt": prompt,
            "max_tokens": self._max_tokens,
            "temperature": self._temperature,
        })
        text = response.get("text") if isinstance(response, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise ExternalServiceError("generator returned no usable text")
        return text.strip()


def external_generate(client: ExternalNlgClient, prompt: str) -> str:
    return client.generate(prompt)


def generate(variant: str, kb: KnowledgeBase, bank: ParaphraseBank,
             lexicon: EmoteLexicon, context: GenerationContext,
             codes: ControlCodes, rng: random.Random,
             external_client: ExternalNlgClient | None = None,
             consistency_threshold: int = CONSISTENCY_THRESHOLD) -> str:
    """One patient-facing question for the requested variant."""
    check_variant(variant)
    finding = kb.require_finding(codes.next_finding)

    if variant == "expert":
        return bank.sample_question(finding.id, rng, diversity=False)

    if variant == "paraphrase":
        return bank.sample_question(finding.id, rng, diversity=True)

    if variant == "external":
        if external_client is None:
            raise ContractError("external variant requires a configured client")
        prompt = render_prompt(context, codes)
        try:
            text = external_generate(external_client, prompt)
            if validate_consistency(text, finding.id, bank, lexicon,
                                    consistency_threshold):
                return text
            warnings.warn(f"external generation for {finding.id!r} failed the "
                          f"consistency check; falling back")
        except ExternalServiceError as exc:
            warnings.warn(f"external generator unavailable ({exc}); falling back")
        # degrade to the emotive path below

    question = bank.sample_question(finding.id, rng, diversity=True)
    if codes.emote == NONE:
        return question
    phrase = sample_emote_phrase(lexicon, codes.emote, rng)
    return join_emote(phrase, question)


# -- conversation dataset -----------------------------------------------------------

def build_conversation_dataset(
        cases: Sequence[ClinicalCase], kb: KnowledgeBase, bank: ParaphraseBank,
        lexicon: EmoteLexicon, rng: random.Random, with_emotes: bool = True,
        skipped: list[tuple[int, list[str]]] | None = None) -> list[TrainingInstance]:
    """One training instance per consecutive finding pair of each valid case.

    The previous turn is reconstructed from the earlier finding (sampled
    question plus Yes/No from its polarity); the emote code is drawn
    uniformly when with_emotes is set, otherwise fixed to none.  Cases that
    fail validation are skipped and reported through the skipped list.
    """
    instances: list[TrainingInstance] = []
    for case in cases:
        violations = validate_case(kb, case)
        if violations:
            if skipped is not None:
                skipped.append((case.id, violations))
            continue
        rfe_name = kb.require_finding(case.rfe).name
        for i in range(1, len(case.findings)):
            previous = case.findings[i - 1]
            target = case.findings[i]
            previous_question = bank.sample_question(
                previous.finding_id, rng, diversity=True)
            previous_response = "Yes" if previous.polarity == PRESENT else "No"
            target_question = bank.sample_question(
                target.finding_id, rng, diversity=True)
            code = rng.choice(CLASS_ORDER) if with_emotes else NONE
            if code == NONE:
                target_text = target_question
            else:
                phrase = sample_emote_phrase(lexicon, code, rng)
                target_text = join_emote(phrase, target_question)
            context = GenerationContext(
                age_band=case.age_band,
                gender=case.gender,
                rfe=rfe_name,
                prior_findings=tuple(
                    (kb.require_finding(a.finding_id).name, a.polarity == PRESENT)
                    for a in case.findings[:i]),
                previous_question=previous_question,
                previous_response=previous_response,
            )
            codes = ControlCodes(next_finding=target.finding_id, emote=code)
            instances.append(TrainingInstance(
                serialized_context=render_prompt(context, codes),
                target_text=target_text,
            ))
    return instances


def write_instances(path: Path | str, instances: Sequence[TrainingInstance]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for instance in instances:
            handle.write(json.dumps(
                {"serialized_context": instance.serialized_context,
                 "target_text": instance.target_text},
                ensure_ascii=False) + "\n")


def read_instances(path: Path | str) -> list[TrainingInstance]:
    instances = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            instances.append(TrainingInstance(
                serialized_context=record["serialized_context"],
                target_text=record["target_text"],
            ))
    return instances
