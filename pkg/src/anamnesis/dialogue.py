"""Conversation tracker and manager loop.

Each session walks the ask-answer cycle: rank the differential, stop if the
margin, the question budget, or the supply of findings says so, otherwise pick
the most valuable finding, decide how to emote, and render the question in the
configured style.  Sessions are event-journaled so any past conversation can
be reconstructed exactly.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .classifier import EmotionClassifier
from .emotes import NONE, ContextTriple, EmoteLexicon
from .errors import ContractError, NotFoundError, ReplayError, SessionError
from .kb import (
    ABSENT,
    PRESENT,
    Assertion,
    DifferentialDiagnosis,
    KnowledgeBase,
    differential,
    margin,
    next_finding,
)
from .nlg import ControlCodes, GenerationContext, check_variant, generate
from .paraphrase import ParaphraseBank
from .text import fuzzy_score

ACTIVE = "active"
CONCLUDED = "concluded"

EMOTE_MODES = ("classifier", "none")

MARGIN_REACHED = "margin_reached"
BUDGET_EXHAUSTED = "question_budget_exhausted"
FINDINGS_EXHAUSTED = "findings_exhausted"
TERMINATION_REASONS = (MARGIN_REACHED, BUDGET_EXHAUSTED, FINDINGS_EXHAUSTED)

UNKNOWN = "unknown"

AFFIRMATIVE_ANSWERS = ("yes", "y", "yeah", "yep", "i do", "correct", "definitely")
NEGATIVE_ANSWERS = ("no", "n", "nope", "not really", "i don't", "never")

RESOLVE_THRESHOLD = 90
SUGGESTION_COUNT = 3

CLARIFICATION_TEMPLATE = (
    "Sorry, I didn't catch that — please answer yes or no. {question}"
)

_EVENT_NAMES = ("started", "question_emitted", "answer_received", "concluded")


# -- answer parsing ----------------------------------------------------------

_PHRASE_TABLE = tuple(sorted(
    [(entry, PRESENT) for entry in AFFIRMATIVE_ANSWERS]
    + [(entry, ABSENT) for entry in NEGATIVE_ANSWERS],
    key=lambda pair: -len(pair[0]),
))
_AFFIRMATIVE_SET = frozenset(AFFIRMATIVE_ANSWERS)
_NEGATIVE_SET = frozenset(NEGATIVE_ANSWERS)


def parse_answer(raw_text: str) -> str:
    """Extract a polarity from free text: present, absent, or unknown.

    Lookup order: the whole (lowercased, punctuation-trimmed) text against the
    answer tables, then the leading token, then the longest table phrase that
    starts the text on a word boundary.  Anything else is unknown.
    """
    text = " ".join(raw_text.replace("’", "'").lower().split())
    text = text.rstrip(" .!?,;:")
    if not text:
        return UNKNOWN
    if text in _AFFIRMATIVE_SET:
        return PRESENT
    if text in _NEGATIVE_SET:
        return ABSENT
    leading = text.split(" ", 1)[0].rstrip(".,!?;:")
    if leading in _AFFIRMATIVE_SET:
        return PRESENT
    if leading in _NEGATIVE_SET:
        return ABSENT
    for entry, polarity in _PHRASE_TABLE:
        if text.startswith(entry + " "):
            return polarity
    return UNKNOWN


def resolve_finding(kb: KnowledgeBase, text: str,
                    threshold: int = RESOLVE_THRESHOLD) -> str:
    """Resolve free text to an askable finding id.

    Exact name match wins; otherwise the best fuzzy match at or above the
    threshold (ties on ascending finding id).  Below threshold the error
    carries the top suggestions.
    """
    if not text or not text.strip():
        raise ContractError("finding text must be non-empty")
    scored: list[tuple[int, str]] = []
    for fid in kb.askable_finding_ids():
        score = fuzzy_score(text, kb.findings[fid].name)
        if score == 100:
            return fid
        scored.append((score, fid))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    if scored and scored[0][0] >= threshold:
        return scored[0][1]
    suggestions = [kb.findings[fid].name for _, fid in scored[:SUGGESTION_COUNT]]
    raise NotFoundError(
        f"no finding matches {text!r}; did you mean: {', '.join(suggestions)}?")


# -- session state -----------------------------------------------------------


@dataclass(frozen=True)
class EngineConfig:
    variant: str = "emotive"
    max_questions: int = 10
    margin_threshold: float = 20.0
    seed: int = 0
    emote_mode: str = "none"

    def __post_init__(self):
        check_variant(self.variant)
        if self.max_questions < 1:
            raise ContractError("max_questions must be at least 1")
        if self.emote_mode not in EMOTE_MODES:
            raise ContractError(
                f"emote_mode must be one of {EMOTE_MODES}, got {self.emote_mode!r}")

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "max_questions": self.max_questions,
            "margin_threshold": self.margin_threshold,
            "seed": self.seed,
            "emote_mode": self.emote_mode,
        }


@dataclass(frozen=True)
class PatientProfile:
    age_band: str
    gender: str

    def __post_init__(self):
        if not self.age_band or not self.gender:
            raise ContractError("age_band and gender must be non-empty")


@dataclass
class Turn:
    question: str
    codes: ControlCodes
    raw_answer: Optional[str] = None
    polarity: Optional[str] = None

    @property
    def answered(self) -> bool:
        return self.raw_answer is not None


@dataclass
class ConversationState:
    session_id: int
    age_band: str
    gender: str
    rfe: str  # finding id of the reason for encounter
    config: EngineConfig
    assertions: list[Assertion] = field(default_factory=list)
    turns: list[Turn] = field(default_factory=list)
    status: str = ACTIVE
    termination_reason: Optional[str] = None
    final_margin: Optional[float] = None

    @property
    def question_count(self) -> int:
        return len(self.turns)

    @property
    def pending(self) -> Optional[Turn]:
        if self.turns and not self.turns[-1].answered:
            return self.turns[-1]
        return None


# -- step results ------------------------------------------------------------


@dataclass(frozen=True)
class NextQuestion:
    text: str
    finding_id: str
    emote: str


@dataclass(frozen=True)
class ClarificationRequest:
    text: str


@dataclass(frozen=True)
class Conclusion:
    reason: str
    margin: float
    question_count: int
    differential: DifferentialDiagnosis


# -- engine ------------------------------------------------------------------


class DialogueEngine:
    """Multi-session history-taking engine over a shared knowledge base.

    The KB, paraphrase bank, lexicon, and classifier are shared read-only.
    Session operations are serialized per session; journal appends are atomic.
    """

    def __init__(self, kb: KnowledgeBase, bank: ParaphraseBank,
                 lexicon: EmoteLexicon,
                 default_config: EngineConfig = EngineConfig(), *,
                 classifier: Optional[EmotionClassifier] = None,
                 external_client=None,
                 journal_path: Optional[str | Path] = None):
        self._kb = kb
        self._bank = bank
        self._lexicon = lexicon
        self._default_config = default_config
        self._classifier = classifier
        self._external_client = external_client
        self._journal_path = Path(journal_path) if journal_path else None
        self._sessions: dict[int, ConversationState] = {}
        self._rngs: dict[int, random.Random] = {}
        self._locks: dict[int, threading.Lock] = {}
        self._events: list[dict] = []
        self._registry_lock = threading.Lock()
        self._journal_lock = threading.Lock()
        self._next_id = 0

    @property
    def kb(self) -> KnowledgeBase:
        return self._kb

    @property
    def default_config(self) -> EngineConfig:
        return self._default_config

    # -- lifecycle -----------------------------------------------------------

    def start_conversation(self, profile: PatientProfile, rfe_text: str,
                           config: Optional[EngineConfig] = None,
                           ) -> tuple[int, NextQuestion | Conclusion]:
        config = config if config is not None else self._default_config
        self._check_support(config)
        rfe_id = resolve_finding(self._kb, rfe_text)
        with self._registry_lock:
            session_id = self._next_id
            self._next_id += 1
            state = ConversationState(
                session_id=session_id, age_band=profile.age_band,
                gender=profile.gender, rfe=rfe_id, config=config,
                assertions=[Assertion(rfe_id, PRESENT)])
            self._sessions[session_id] = state
            self._rngs[session_id] = random.Random(f"{config.seed}:{session_id}")
            self._locks[session_id] = threading.Lock()
        self._journal({
            "event": "started", "session": session_id,
            "age_band": profile.age_band, "gender": profile.gender,
            "rfe": rfe_id, "config": config.as_dict(),
        })
        with self._locks[session_id]:
            result = self._step(state, self._rngs[session_id], previous_raw=None)
        return session_id, result

    def submit_answer(self, session_id: int, raw_text: str,
                      ) -> NextQuestion | ClarificationRequest | Conclusion:
        state, rng, lock = self._session(session_id)
        with lock:
            if state.status != ACTIVE:
                raise SessionError(f"session {session_id} already concluded")
            pending = state.pending
            if pending is None:
                raise SessionError(f"session {session_id} has no pending question")
            polarity = parse_answer(raw_text)
            if polarity == UNKNOWN:
                return ClarificationRequest(
                    text=CLARIFICATION_TEMPLATE.format(question=pending.question))
            pending.raw_answer = raw_text
            pending.polarity = polarity
            state.assertions.append(
                Assertion(pending.codes.next_finding, polarity))
            self._journal({
                "event": "answer_received", "session": session_id,
                "text": raw_text, "polarity": polarity,
            })
            return self._step(state, rng, previous_raw=raw_text)

    # -- read-only views -----------------------------------------------------

    def get_state(self, session_id: int) -> ConversationState:
        state, _, _ = self._session(session_id)
        return state

    def get_differential(self, session_id: int) -> DifferentialDiagnosis:
        state, _, lock = self._session(session_id)
        with lock:
            assertions = tuple(state.assertions)
        return differential(self._kb, assertions)

    def session_ids(self) -> list[int]:
        with self._registry_lock:
            return sorted(self._sessions)

    def journal_events(self) -> list[dict]:
        with self._journal_lock:
            return [dict(event) for event in self._events]

    # -- internals -----------------------------------------------------------

    def _check_support(self, config: EngineConfig) -> None:
        if config.emote_mode == "classifier" and self._classifier is None:
            raise ContractError(
                "emote_mode 'classifier' requires an emotion classifier")
        if config.variant == "external" and self._external_client is None:
            raise ContractError(
                "variant 'external' requires an external generation client")

    def _session(self, session_id: int
                 ) -> tuple[ConversationState, random.Random, threading.Lock]:
        with self._registry_lock:
            if session_id not in self._sessions:
                raise SessionError(f"unknown session {session_id}")
            return (self._sessions[session_id], self._rngs[session_id],
                    self._locks[session_id])

    def _step(self, state: ConversationState, rng: random.Random,
              previous_raw: Optional[str]) -> NextQuestion | Conclusion:
        dd = differential(self._kb, state.assertions)
        current_margin = margin(dd)
        if current_margin >= state.config.margin_threshold:
            return self._conclude(state, MARGIN_REACHED, dd, current_margin)
        if state.question_count >= state.config.max_questions:
            return self._conclude(state, BUDGET_EXHAUSTED, dd, current_margin)
        target = next_finding(self._kb, state.assertions, dd)
        if target is None:
            return self._conclude(state, FINDINGS_EXHAUSTED, dd, current_margin)

        code = self._decide_emote(state, target, previous_raw)
        codes = ControlCodes(next_finding=target, emote=code)
        context = self._generation_context(state, previous_raw)
        question = generate(
            state.config.variant, self._kb, self._bank, self._lexicon,
            context, codes, rng, external_client=self._external_client)
        state.turns.append(Turn(question=question, codes=codes))
        self._journal({
            "event": "question_emitted", "session": state.session_id,
            "finding": target, "emote": code, "text": question,
        })
        return NextQuestion(text=question, finding_id=target, emote=code)

    def _decide_emote(self, state: ConversationState, target: str,
                      previous_raw: Optional[str]) -> str:
        if state.config.emote_mode != "classifier":
            return NONE
        if state.config.variant not in ("emotive", "external"):
            return NONE
        if not state.turns or previous_raw is None:
            return NONE  # nothing yet to react to
        triple = ContextTriple(
            previous_question=state.turns[-1].question,
            patient_response=previous_raw,
            target_finding=self._kb.require_finding(target).name)
        code, _ = self._classifier.predict(triple)
        return code

    def _generation_context(self, state: ConversationState,
                            previous_raw: Optional[str]) -> GenerationContext:
        prior = tuple(
            (self._kb.require_finding(a.finding_id).name, a.is_present)
            for a in state.assertions if a.finding_id != state.rfe)
        previous_question = state.turns[-1].question if state.turns else ""
        return GenerationContext(
            age_band=state.age_band, gender=state.gender,
            rfe=self._kb.require_finding(state.rfe).name,
            prior_findings=prior,
            previous_question=previous_question,
            previous_response=previous_raw or "")

    def _conclude(self, state: ConversationState, reason: str,
                  dd: DifferentialDiagnosis, final_margin: float) -> Conclusion:
        state.status = CONCLUDED
        state.termination_reason = reason
        state.final_margin = final_margin
        self._journal({
            "event": "concluded", "session": state.session_id,
            "reason": reason, "margin": final_margin,
            "question_count": state.question_count,
        })
        return Conclusion(reason=reason, margin=final_margin,
                          question_count=state.question_count, differential=dd)

    def _journal(self, event: dict) -> None:
        with self._journal_lock:
            self._events.append(event)
            if self._journal_path is not None:
                line = json.dumps(event, ensure_ascii=False, sort_keys=True,
                                  separators=(",", ":"))
                with open(self._journal_path, "a", encoding="utf-8") as handle:
                    handle.write(line + "\n")


# -- journal replay ----------------------------------------------------------


def _replay_error(offset: int, why: str) -> ReplayError:
    return ReplayError(f"journal line {offset}: {why}")


def _get(event: dict, key: str, offset: int):
    if key not in event:
        raise _replay_error(offset, f"missing field {key!r}")
    return event[key]


def replay_journal(source: str | Path | Iterable[str]
                   ) -> dict[int, ConversationState]:
    """Rebuild every session's state from an event journal.

    Accepts a path or an iterable of JSON lines.  Corrupt records raise
    ReplayError naming the offending line.
    """
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = list(source)

    sessions: dict[int, ConversationState] = {}
    for offset, line in enumerate(lines, start=1):
        if not line.strip():
            raise _replay_error(offset, "empty record")
        try:
            event = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _replay_error(offset, f"invalid JSON ({exc.msg})") from None
        if not isinstance(event, dict):
            raise _replay_error(offset, "record is not an object")
        name = _get(event, "event", offset)
        if name not in _EVENT_NAMES:
            raise _replay_error(offset, f"unknown event {name!r}")
        session_id = _get(event, "session", offset)

        if name == "started":
            if session_id in sessions:
                raise _replay_error(offset, f"session {session_id} restarted")
            try:
                config = EngineConfig(**_get(event, "config", offset))
            except (TypeError, ContractError) as exc:
                raise _replay_error(offset, f"bad config ({exc})") from None
            rfe = _get(event, "rfe", offset)
            sessions[session_id] = ConversationState(
                session_id=session_id,
                age_band=_get(event, "age_band", offset),
                gender=_get(event, "gender", offset),
                rfe=rfe, config=config,
                assertions=[Assertion(rfe, PRESENT)])
            continue

        state = sessions.get(session_id)
        if state is None:
            raise _replay_error(offset, f"unknown session {session_id}")
        if state.status == CONCLUDED:
            raise _replay_error(offset, f"session {session_id} already concluded")

        if name == "question_emitted":
            if state.pending is not None:
                raise _replay_error(offset, "question while one is pending")
            codes = ControlCodes(next_finding=_get(event, "finding", offset),
                                 emote=_get(event, "emote", offset))
            state.turns.append(Turn(question=_get(event, "text", offset),
                                    codes=codes))
        elif name == "answer_received":
            pending = state.pending
            if pending is None:
                raise _replay_error(offset, "answer without a pending question")
            pending.raw_answer = _get(event, "text", offset)
            pending.polarity = _get(event, "polarity", offset)
            state.assertions.append(
                Assertion(pending.codes.next_finding, pending.polarity))
        else:  # concluded
            reason = _get(event, "reason", offset)
            if reason not in TERMINATION_REASONS:
                raise _replay_error(offset, f"unknown termination {reason!r}")
            state.status = CONCLUDED
            state.termination_reason = reason
            state.final_margin = _get(event, "margin", offset)
    return sessions
