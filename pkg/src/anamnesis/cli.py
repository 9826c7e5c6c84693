"""Command line entry points.

Subcommands: serve (HTTP API), chat (terminal REPL), simulate (clinical
cases), build-dataset (conversation training instances), train-emotion,
eval-emotion, and mine-emotes (emote rows from doctor-edited questions).
Resource flags accept file paths; ``--kb demo`` loads the built-in
demonstration knowledge base.
"""

from __future__ import annotations

import argparse
import random
import sys
from typing import Optional

from .classifier import TrainConfig, evaluate, load_classifier, render_report, train
from .config import Settings, load_settings
from .dialogue import (
    ClarificationRequest,
    Conclusion,
    DialogueEngine,
    NextQuestion,
    PatientProfile,
)
from .embedding import HashingEmbedder
from .emotes import EmoteLexicon, build_emote_dataset, read_edit_records, \
    read_emote_rows, write_emote_rows
from .errors import AnamnesisError
from .kb import load_kb
from .nlg import ExternalNlgClient, build_conversation_dataset, write_instances
from .paraphrase import read_bank, seed_from_kb
from .simulator import SimulatorConfig, read_cases, simulate_dataset, write_cases
from .synth import build_demo_kb

DEMO_KB = "demo"


def _load_kb_spec(spec: str):
    if spec == DEMO_KB:
        return build_demo_kb()
    return load_kb(spec)


def _load_bank(kb, path: Optional[str]):
    return read_bank(path) if path else seed_from_kb(kb)


def _load_lexicon(path: Optional[str]) -> EmoteLexicon:
    return EmoteLexicon.load(path) if path else EmoteLexicon.default()


def _apply_flag_overrides(settings: Settings, args) -> Settings:
    from dataclasses import replace

    overrides = {}
    for flag, name in (("kb", "kb_path"), ("bank", "bank_path"),
                       ("lexicon", "lexicon_path"), ("model", "model_path"),
                       ("journal", "journal_path"), ("host", "host"),
                       ("port", "port"), ("seed", "seed"),
                       ("variant", "variant"), ("emote_mode", "emote_mode"),
                       ("external_endpoint", "external_endpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    return replace(settings, **overrides) if overrides else settings


def build_service(settings: Settings):
    """Assemble the FastAPI app described by the settings."""
    from .service import create_app

    kb = _load_kb_spec(settings.kb_path or DEMO_KB)
    bank = _load_bank(kb, settings.bank_path)
    lexicon = _load_lexicon(settings.lexicon_path)
    classifier = (load_classifier(settings.model_path)
                  if settings.model_path else None)
    external = (ExternalNlgClient(settings.external_endpoint)
                if settings.external_endpoint else None)
    return create_app(kb, bank, lexicon, classifier=classifier,
                      external_client=external,
                      default_config=settings.engine_config(),
                      journal_path=settings.journal_path)


def cmd_serve(args) -> int:
    from .service import run_server

    settings = _apply_flag_overrides(load_settings(args.config), args)
    app = build_service(settings)
    run_server(app, host=settings.host, port=settings.port)
    return 0


def _render_differential(conclusion: Conclusion, kb, write) -> None:
    write(f"concluded: {conclusion.reason} "
          f"(margin {conclusion.margin:g}, "
          f"{conclusion.question_count} questions)")
    write("differential:")
    for entry in conclusion.differential.entries[:5]:
        name = kb.require_disease(entry.disease_id).name
        write(f"  {entry.probability:6.1%}  {name}")


def chat_loop(engine: DialogueEngine, profile: PatientProfile, rfe: str,
              lines, write) -> int:
    """Drive one conversation from an iterator of answer lines."""
    session_id, first = engine.start_conversation(profile, rfe)
    if isinstance(first, Conclusion):
        _render_differential(first, engine.kb, write)
        return 0
    write(f"q: {first.text}")
    for raw in lines:
        answer = raw.rstrip("\n")
        if not answer.strip():
            continue
        outcome = engine.submit_answer(session_id, answer)
        if isinstance(outcome, ClarificationRequest):
            write(outcome.text)
        elif isinstance(outcome, NextQuestion):
            write(f"q: {outcome.text}")
        else:
            _render_differential(outcome, engine.kb, write)
            return 0
    write("conversation ended without a conclusion")
    return 1


def cmd_chat(args) -> int:
    settings = _apply_flag_overrides(load_settings(args.config), args)
    kb = _load_kb_spec(settings.kb_path or DEMO_KB)
    bank = _load_bank(kb, settings.bank_path)
    lexicon = _load_lexicon(settings.lexicon_path)
    classifier = (load_classifier(settings.model_path)
                  if settings.model_path else None)
    engine = DialogueEngine(kb, bank, lexicon, settings.engine_config(),
                            classifier=classifier,
                            journal_path=settings.journal_path)
    profile = PatientProfile(age_band=args.age_band, gender=args.gender)
    return chat_loop(engine, profile, args.rfe, sys.stdin, print)


def cmd_simulate(args) -> int:
    kb = _load_kb_spec(args.kb)
    config = SimulatorConfig(
        margin_threshold=args.threshold, min_findings=args.min_findings,
        max_findings=args.max_findings, p_absent=args.p_absent,
        seed=args.seed)
    cases = simulate_dataset(kb, config, args.cases)
    write_cases(cases, kb, args.out)
    print(f"wrote {len(cases)} cases to {args.out}")
    return 0


def cmd_build_dataset(args) -> int:
    kb = _load_kb_spec(args.kb)
    bank = _load_bank(kb, args.bank)
    lexicon = _load_lexicon(args.lexicon)
    cases = read_cases(args.cases, kb)
    skipped: list = []
    instances = build_conversation_dataset(
        cases, kb, bank, lexicon, random.Random(args.seed),
        with_emotes=not args.no_emotes, skipped=skipped)
    write_instances(args.out, instances)
    print(f"wrote {len(instances)} instances to {args.out} "
          f"({len(skipped)} cases skipped)")
    for case_id, violations in skipped:
        print(f"  skipped case {case_id}: {'; '.join(violations)}")
    return 0


def cmd_train_emotion(args) -> int:
    from .classifier import save_classifier

    rows = read_emote_rows(args.data)
    config = TrainConfig(k=args.k, C=args.c, seed=args.seed)
    classifier = train(rows, HashingEmbedder(dim=args.dim), config)
    save_classifier(args.out, classifier)
    print(f"trained on {len(rows)} rows "
          f"(k={classifier.config.k}, C={classifier.config.C}); "
          f"model written to {args.out}")
    return 0


def cmd_eval_emotion(args) -> int:
    classifier = load_classifier(args.model)
    rows = read_emote_rows(args.data)
    report = evaluate(classifier, rows)
    print(render_report(report), end="")
    return 0


def cmd_mine_emotes(args) -> int:
    records = read_edit_records(args.records)
    lexicon = _load_lexicon(args.lexicon)
    review: list = []
    rows = build_emote_dataset(records, lexicon, review)
    write_emote_rows(rows, args.out)
    print(f"mined {len(rows)} rows from {len(records)} edit records "
          f"({len(review)} unmatched phrases need review)")
    return 0


def _add_resource_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None,
                        help="JSON settings file (env vars override it)")
    parser.add_argument("--kb", default=None,
                        help=f"knowledge base path, or '{DEMO_KB}'")
    parser.add_argument("--bank", default=None, help="paraphrase bank path")
    parser.add_argument("--lexicon", default=None, help="emote lexicon path")
    parser.add_argument("--model", default=None,
                        help="trained emotion classifier path")
    parser.add_argument("--journal", default=None,
                        help="append session events to this file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--variant", default=None,
                        help="expert | paraphrase | emotive | external")
    parser.add_argument("--emote-mode", dest="emote_mode", default=None,
                        help="classifier | none")
    parser.add_argument("--external-endpoint", dest="external_endpoint",
                        default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anamnesis",
        description="Controllable medical history-taking dialogue engine")
    commands = parser.add_subparsers(dest="command", required=True)

    serve = commands.add_parser("serve", help="run the HTTP API")
    _add_resource_flags(serve)
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    serve.set_defaults(func=cmd_serve)

    chat = commands.add_parser("chat", help="terminal conversation REPL")
    _add_resource_flags(chat)
    chat.add_argument("--age-band", dest="age_band",
                      default="young adult (18 to 40 yrs)")
    chat.add_argument("--gender", default="female")
    chat.add_argument("rfe", help="reason for encounter (finding name)")
    chat.set_defaults(func=cmd_chat)

    simulate = commands.add_parser("simulate",
                                   help="sample synthetic clinical cases")
    simulate.add_argument("--kb", default=DEMO_KB)
    simulate.add_argument("--out", required=True)
    simulate.add_argument("--cases", type=int, default=100)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--threshold", type=float, default=20.0)
    simulate.add_argument("--p-absent", dest="p_absent", type=float,
                          default=0.6)
    simulate.add_argument("--min-findings", dest="min_findings", type=int,
                          default=5)
    simulate.add_argument("--max-findings", dest="max_findings", type=int,
                          default=20)
    simulate.set_defaults(func=cmd_simulate)

    build = commands.add_parser("build-dataset",
                                help="conversation training instances")
    build.add_argument("--kb", default=DEMO_KB)
    build.add_argument("--cases", required=True, help="simulated cases file")
    build.add_argument("--bank", default=None)
    build.add_argument("--lexicon", default=None)
    build.add_argument("--out", required=True)
    build.add_argument("--seed", type=int, default=0)
    build.add_argument("--no-emotes", dest="no_emotes", action="store_true")
    build.set_defaults(func=cmd_build_dataset)

    train_cmd = commands.add_parser("train-emotion",
                                    help="fit the emotion classifier")
    train_cmd.add_argument("--data", required=True, help="emote rows file")
    train_cmd.add_argument("--out", required=True)
    train_cmd.add_argument("--k", type=int, default=70)
    train_cmd.add_argument("--c", type=float, default=10.0)
    train_cmd.add_argument("--dim", type=int, default=384)
    train_cmd.add_argument("--seed", type=int, default=0)
    train_cmd.set_defaults(func=cmd_train_emotion)

    eval_cmd = commands.add_parser("eval-emotion",
                                   help="score a trained classifier")
    eval_cmd.add_argument("--model", required=True)
    eval_cmd.add_argument("--data", required=True)
    eval_cmd.set_defaults(func=cmd_eval_emotion)

    mine = commands.add_parser("mine-emotes",
                               help="emote rows from doctor-edited questions")
    mine.add_argument("--records", required=True,
                      help="edited-question records file")
    mine.add_argument("--lexicon", default=None)
    mine.add_argument("--out", required=True)
    mine.set_defaults(func=cmd_mine_emotes)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AnamnesisError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
