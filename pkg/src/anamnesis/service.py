"""HTTP facade over the dialogue engine: conversations, A/B pairs, ratings.

The service owns one engine (knowledge base, paraphrase bank, lexicon, and
optional classifier shared read-only across sessions) plus an in-memory
registry of paired A/B runs and submitted preference ratings.  Model identity
in a pair is anonymized server-side and revealed only by rating it.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, replace
from typing import Optional

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .classifier import EmotionClassifier
from .dialogue import (
    ClarificationRequest,
    Conclusion,
    ConversationState,
    DialogueEngine,
    EngineConfig,
    NextQuestion,
    PatientProfile,
)
from .emotes import EmoteLexicon
from .errors import (
    AnamnesisError,
    ContractError,
    ExternalServiceError,
    GenerationError,
    NotFoundError,
    SessionError,
)
from .evaluation import RatingRecord
from .kb import DifferentialDiagnosis, KnowledgeBase
from .paraphrase import ParaphraseBank

PAIR_SIDES = ("a", "b")


class ConversationRequest(BaseModel):
    age_band: str
    gender: str
    rfe: str
    variant: Optional[str] = None
    seed: Optional[int] = None
    emote_mode: Optional[str] = None
    max_questions: Optional[int] = None
    margin_threshold: Optional[float] = None


class AnswerRequest(BaseModel):
    text: str


class PairRequest(BaseModel):
    age_band: str
    gender: str
    rfe: str
    variant_a: str = "expert"
    variant_b: str = "emotive"
    seed: Optional[int] = None


class RatingRequest(BaseModel):
    pair_id: int
    rater_id: str
    points_a: int
    points_b: int
    comment: str = ""


@dataclass
class PairRun:
    pair_id: int
    sessions: dict[str, int]   # side label -> session id
    variants: dict[str, str]   # side label -> engine variant (hidden until rated)
    rated: bool = False


def _finite(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _differential_payload(dd: DifferentialDiagnosis, kb: KnowledgeBase) -> list:
    return [{
        "disease_id": entry.disease_id,
        "name": kb.require_disease(entry.disease_id).name,
        "raw_score": entry.raw_score,
        "probability": entry.probability,
    } for entry in dd.entries]


def _result_payload(result, kb: KnowledgeBase) -> dict:
    if isinstance(result, NextQuestion):
        return {"kind": "question",
                "question": {"text": result.text,
                             "finding_id": result.finding_id,
                             "emote": result.emote}}
    if isinstance(result, ClarificationRequest):
        return {"kind": "clarification", "text": result.text}
    if isinstance(result, Conclusion):
        return {"kind": "conclusion",
                "conclusion": {
                    "reason": result.reason,
                    "margin": _finite(result.margin),
                    "question_count": result.question_count,
                    "differential": _differential_payload(result.differential,
                                                          kb)}}
    raise ContractError(f"unexpected engine result {result!r}")


def _state_payload(state: ConversationState) -> dict:
    return {
        "session_id": state.session_id,
        "age_band": state.age_band,
        "gender": state.gender,
        "rfe": state.rfe,
        "status": state.status,
        "question_count": state.question_count,
        "termination_reason": state.termination_reason,
        "final_margin": (_finite(state.final_margin)
                         if state.final_margin is not None else None),
        "config": state.config.as_dict(),
        "assertions": [{"finding_id": a.finding_id, "polarity": a.polarity}
                       for a in state.assertions],
        "turns": [{"question": t.question,
                   "finding_id": t.codes.next_finding,
                   "emote": t.codes.emote,
                   "answer": t.raw_answer,
                   "polarity": t.polarity} for t in state.turns],
    }


def create_app(kb: KnowledgeBase, bank: ParaphraseBank, lexicon: EmoteLexicon,
               *, classifier: Optional[EmotionClassifier] = None,
               external_client=None,
               default_config: EngineConfig = EngineConfig(),
               journal_path=None) -> FastAPI:
    engine = DialogueEngine(kb, bank, lexicon, default_config,
                            classifier=classifier,
                            external_client=external_client,
                            journal_path=journal_path)
    app = FastAPI(title="anamnesis", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.engine = engine
    app.state.pairs = {}
    app.state.ratings = []
    registry_lock = threading.Lock()

    @app.exception_handler(AnamnesisError)
    def _domain_error(request, exc: AnamnesisError):
        if isinstance(exc, (SessionError, NotFoundError)):
            status = 404
        elif isinstance(exc, (ExternalServiceError, GenerationError)):
            status = 502
        else:
            status = 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    def effective_config(**overrides) -> EngineConfig:
        given = {key: value for key, value in overrides.items()
                 if value is not None}
        return replace(default_config, **given) if given else default_config

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "diseases": len(kb.diseases),
                "findings": len(kb.findings)}

    @app.post("/conversations", status_code=201)
    def start_conversation(body: ConversationRequest):
        config = effective_config(
            variant=body.variant, seed=body.seed, emote_mode=body.emote_mode,
            max_questions=body.max_questions,
            margin_threshold=body.margin_threshold)
        profile = PatientProfile(age_band=body.age_band, gender=body.gender)
        session_id, first = engine.start_conversation(profile, body.rfe,
                                                      config)
        return {"session_id": session_id, **_result_payload(first, kb)}

    @app.post("/conversations/{session_id}/answers")
    def submit_answer(session_id: int, body: AnswerRequest):
        outcome = engine.submit_answer(session_id, body.text)
        return _result_payload(outcome, kb)

    @app.get("/conversations/{session_id}")
    def get_conversation(session_id: int):
        return _state_payload(engine.get_state(session_id))

    @app.get("/conversations/{session_id}/differential")
    def get_differential(session_id: int):
        from .kb import margin as margin_of
        dd = engine.get_differential(session_id)
        return {"differential": _differential_payload(dd, kb),
                "margin": _finite(margin_of(dd))}

    @app.post("/pairs", status_code=201)
    def start_pair(body: PairRequest):
        import random as _random

        profile = PatientProfile(age_band=body.age_band, gender=body.gender)
        with registry_lock:
            pair_id = len(app.state.pairs)
            # Anonymize: which requested variant answers as side "a" is
            # decided by a pair-local coin, revealed only after rating.
            coin = _random.Random(
                f"{body.seed if body.seed is not None else default_config.seed}"
                f":pair:{pair_id}")
            ordered = [body.variant_a, body.variant_b]
            coin.shuffle(ordered)
            variants = dict(zip(PAIR_SIDES, ordered))
            app.state.pairs[pair_id] = PairRun(
                pair_id=pair_id, sessions={}, variants=variants)
        run = app.state.pairs[pair_id]
        sessions_payload = {}
        for side in PAIR_SIDES:
            config = effective_config(variant=run.variants[side],
                                      seed=body.seed)
            session_id, first = engine.start_conversation(profile, body.rfe,
                                                          config)
            run.sessions[side] = session_id
            sessions_payload[side] = {"session_id": session_id,
                                      **_result_payload(first, kb)}
        return {"pair_id": pair_id, "sessions": sessions_payload}

    @app.get("/pairs/{pair_id}")
    def get_pair(pair_id: int):
        run = app.state.pairs.get(pair_id)
        if run is None:
            raise NotFoundError(f"unknown pair {pair_id}")
        payload = {"pair_id": pair_id, "rated": run.rated, "sessions": {}}
        for side in PAIR_SIDES:
            state = engine.get_state(run.sessions[side])
            payload["sessions"][side] = {
                "session_id": state.session_id,
                "status": state.status,
                "question_count": state.question_count,
            }
        if run.rated:
            payload["models"] = dict(run.variants)
        return payload

    @app.post("/ratings", status_code=201)
    def submit_rating(body: RatingRequest):
        run = app.state.pairs.get(body.pair_id)
        if run is None:
            raise NotFoundError(f"unknown pair {body.pair_id}")
        for side in PAIR_SIDES:
            if engine.get_state(run.sessions[side]).status != "concluded":
                raise ContractError(
                    f"pair {body.pair_id} side {side!r} has not concluded; "
                    "rate only finished conversations")
        record = RatingRecord(rater_id=body.rater_id,
                              case_ref=f"pair-{body.pair_id}",
                              points_a=body.points_a, points_b=body.points_b,
                              comment=body.comment)
        with registry_lock:
            app.state.ratings.append(record)
            run.rated = True
        return {"record": {
                    "rater_id": record.rater_id, "case_ref": record.case_ref,
                    "points_a": record.points_a, "points_b": record.points_b,
                    "comment": record.comment},
                "models": dict(run.variants)}

    @app.get("/ratings")
    def list_ratings():
        return {"records": [{
            "rater_id": record.rater_id, "case_ref": record.case_ref,
            "points_a": record.points_a, "points_b": record.points_b,
            "comment": record.comment} for record in app.state.ratings]}

    return app


def run_server(app: FastAPI, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="info")
