#!/usr/bin/env python3
"""End-to-end demo pipeline on the built-in knowledge base.

Produces, under --out:
  kb.jsonl         the demonstration knowledge base
  cases.jsonl      simulated clinical cases
  bank.jsonl       paraphrase bank enriched with validated rule rewrites
  instances.jsonl  conversation training instances with emote codes
  emote_rows.jsonl labeled emote classification rows (train split)
  model.json       trained emotion classifier
  report.txt       held-out classifier evaluation
"""

import argparse
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from anamnesis.classifier import TrainConfig, evaluate, render_report, \
    save_classifier, train
from anamnesis.embedding import HashingEmbedder
from anamnesis.emotes import EmoteLexicon, stratified_split, write_emote_rows
from anamnesis.kb import dump_kb
from anamnesis.nlg import build_conversation_dataset, validate_consistency, \
    write_instances
from anamnesis.paraphrase import RuleParaphraser, generate_candidates, \
    seed_from_kb, write_bank
from anamnesis.simulator import SimulatorConfig, simulate_dataset, write_cases
from anamnesis.synth import build_demo_kb, make_emotion_corpus


def enrich_bank(kb, bank, seed: int, threshold: int = 60) -> tuple[int, int]:
    """Propose rule rewrites for every askable finding and validate them.

    Offline enrichment uses a looser fuzzy gate than serving-time checks:
    rule rewrites keep the finding name but legitimately change the
    sentence frame, so demanding near-identity would reject everything.
    """
    generator = RuleParaphraser()
    rng = random.Random(f"pipeline:{seed}")
    accepted = rejected = 0
    for finding_id in kb.askable_finding_ids():
        finding = kb.require_finding(finding_id)
        for text in generate_candidates(bank, generator, finding, 2, rng):
            if validate_consistency(text, finding_id, bank,
                                    threshold=threshold):
                bank.record_validation(finding_id, text, "consistent")
                accepted += 1
            else:
                bank.record_validation(finding_id, text, "inconsistent",
                                       note="below fuzzy threshold")
                rejected += 1
    return accepted, rejected


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="pipeline_out")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--cases", type=int, default=200)
    parser.add_argument("--emote-rows", type=int, default=400)
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    kb = build_demo_kb()
    (out / "kb.jsonl").write_text(dump_kb(kb), encoding="utf-8")
    print(f"kb: {len(kb.diseases)} diseases, {len(kb.findings)} findings")

    config = SimulatorConfig(seed=args.seed)
    cases = simulate_dataset(kb, config, args.cases)
    write_cases(cases, kb, out / "cases.jsonl")
    print(f"cases: {len(cases)} simulated "
          f"(margin >= {config.margin_threshold:g})")

    bank = seed_from_kb(kb)
    accepted, rejected = enrich_bank(kb, bank, args.seed)
    write_bank(out / "bank.jsonl", bank)
    print(f"bank: {accepted} paraphrases accepted, {rejected} rejected")

    lexicon = EmoteLexicon.default()
    skipped: list = []
    instances = build_conversation_dataset(
        cases, kb, bank, lexicon, random.Random(args.seed), skipped=skipped)
    write_instances(out / "instances.jsonl", instances)
    print(f"instances: {len(instances)} written, {len(skipped)} cases "
          f"skipped")

    rows = make_emotion_corpus(args.emote_rows, seed=args.seed,
                               lexicon=lexicon)
    train_rows, test_rows = stratified_split(rows, 0.25, args.seed)
    write_emote_rows(train_rows, out / "emote_rows.jsonl")
    classifier = train(train_rows, HashingEmbedder(), TrainConfig())
    save_classifier(out / "model.json", classifier)
    report = evaluate(classifier, test_rows)
    (out / "report.txt").write_text(render_report(report), encoding="utf-8")
    print(f"classifier: accuracy {report.accuracy:.3f}, "
          f"macro F1 {report.macro_f1:.3f} on {len(test_rows)} held-out rows")
    return 0


if __name__ == "__main__":
    sys.exit(main())
