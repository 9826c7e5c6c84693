"""Prompt wire format, variant generation, consistency gate, dataset builder."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anamnesis.emotes import CLASS_ORDER, EmoteLexicon
from anamnesis.errors import (
    ContractError,
    ExternalServiceError,
    NotFoundError,
    SchemaError,
)
from anamnesis.kb import Assertion, Association, Disease, Finding, KnowledgeBase
from anamnesis.nlg import (
    ControlCodes,
    ExternalNlgClient,
    GenerationContext,
    TrainingInstance,
    build_conversation_dataset,
    escape_value,
    external_generate,
    generate,
    join_emote,
    parse_prompt,
    read_instances,
    render_prompt,
    strip_emote_prefix,
    unescape_value,
    validate_consistency,
    write_instances,
)
from anamnesis.paraphrase import ParaphraseEntry, seed_from_kb
from anamnesis.simulator import ClinicalCase

GOLDEN_CONTEXT = GenerationContext(
    age_band="middle-aged adult (40 to 65 yrs)",
    gender="female",
    rfe="abdominal pain",
    prior_findings=(("fever", True), ("productive cough", False)),
    previous_question="Do you have a productive cough?",
    previous_response="No",
)
GOLDEN_CODES = ControlCodes(next_finding="vomiting, recurrent", emote="empathy")
GOLDEN_LINE = (
    "AGE=middle-aged adult (40 to 65 yrs)|SEX=female|RFE=abdominal pain|"
    "FINDINGS=fever+;productive cough-|PREVQ=Do you have a productive cough?|"
    "PREVA=No|NEXT=vomiting, recurrent|EMOTE=empathy"
)


@pytest.fixture(scope="module")
def nlg_kb():
    return KnowledgeBase(
        diseases=[Disease("d1", "condition one")],
        findings=[
            Finding(id="rh", name="recurrent headache",
                    expert_question="Do you have headaches that come and go often?"),
            Finding(id="gw", name="generalized weakness",
                    expert_question="Are you weak all over?"),
        ],
        associations=[
            Association("rh", "d1", es=3, tf=2),
            Association("gw", "d1", es=2, tf=1),
        ],
    )


@pytest.fixture(scope="module")
def nlg_bank(nlg_kb):
    bank = seed_from_kb(nlg_kb)
    bank.add(ParaphraseEntry(finding_id="gw", text="Do you feel weak everywhere?",
                             validated="consistent"))
    bank.add(ParaphraseEntry(finding_id="rh", text="Are your headaches recurring?",
                             validated="consistent"))
    return bank


@pytest.fixture(scope="module")
def default_lexicon():
    return EmoteLexicon.default()


class TestEscaping:
    def test_escapes_the_four_special_characters(self):
        assert escape_value("a|b;c\\d\ne") == "a\\|b\\;c\\\\d\\ne"

    def test_unescape_inverts(self):
        assert unescape_value("a\\|b\\;c\\\\d\\ne") == "a|b;c\\d\ne"

    def test_dangling_escape_rejected(self):
        with pytest.raises(SchemaError):
            unescape_value("oops\\")

    def test_unknown_escape_rejected(self):
        with pytest.raises(SchemaError):
            unescape_value("\\x")

    @given(st.text())
    @settings(max_examples=200)
    def test_round_trip_any_text(self, value):
        assert unescape_value(escape_value(value)) == value


class TestPromptFormat:
    def test_golden_line(self):
        assert render_prompt(GOLDEN_CONTEXT, GOLDEN_CODES) == GOLDEN_LINE

    def test_golden_line_parses_back(self):
        context, codes = parse_prompt(GOLDEN_LINE)
        assert context == GOLDEN_CONTEXT
        assert codes == GOLDEN_CODES

    def test_empty_priors_and_none_emote(self):
        line = render_prompt(
            GenerationContext(age_band="child (under 18 yrs)", gender="male",
                              rfe="fever"),
            ControlCodes(next_finding="f1"))
        assert "FINDINGS=|PREVQ=" in line
        assert line.endswith("EMOTE=none")
        context, codes = parse_prompt(line)
        assert context.prior_findings == ()
        assert codes.emote == "none"

    def test_special_characters_survive(self):
        context = GenerationContext(
            age_band="a|b", gender="c;d", rfe="e\\f",
            prior_findings=(("weird|name;x", True), ("line\nbreak", False)),
            previous_question="q|?", previous_response="a;b")
        codes = ControlCodes(next_finding="id|with;specials\\", emote="apology")
        parsed_context, parsed_codes = parse_prompt(render_prompt(context, codes))
        assert parsed_context == context
        assert parsed_codes == codes

    @given(
        st.text(), st.text(), st.text(),
        st.lists(st.tuples(st.text(), st.booleans()), max_size=4),
        st.text(), st.text(),
        st.text(min_size=1),
        st.sampled_from(CLASS_ORDER),
    )
    @settings(max_examples=150)
    def test_round_trip_any_context(self, age, sex, rfe, priors, prevq, preva,
                                    next_finding, emote):
        context = GenerationContext(age, sex, rfe, tuple(priors), prevq, preva)
        codes = ControlCodes(next_finding, emote)
        assert parse_prompt(render_prompt(context, codes)) == (context, codes)

    def test_wrong_field_order_rejected(self):
        bad = GOLDEN_LINE.replace("AGE=", "XAGE=", 1)
        with pytest.raises(SchemaError):
            parse_prompt(bad)

    def test_field_without_equals_rejected(self):
        with pytest.raises(SchemaError):
            parse_prompt("AGE")

    def test_finding_without_polarity_rejected(self):
        bad = GOLDEN_LINE.replace("fever+", "fever", 1)
        with pytest.raises(SchemaError):
            parse_prompt(bad)


class TestJoinAndStrip:
    def test_adds_period_when_phrase_is_open(self):
        assert join_emote("Sorry to know that", "Are you weak all over?") == \
            "Sorry to know that. Are you weak all over?"

    def test_keeps_existing_terminal_punctuation(self):
        assert join_emote("Got it.", "Any fever?") == "Got it. Any fever?"
        assert join_emote("Oh no!", "Any fever?") == "Oh no! Any fever?"

    def test_empty_phrase_returns_question(self):
        assert join_emote("   ", "Any fever?") == "Any fever?"

    def test_strip_removes_longest_known_phrase(self, default_lexicon):
        question = "I am sorry for asking. Do you drink?"
        assert strip_emote_prefix(question, default_lexicon) == "Do you drink?"

    def test_strip_without_prefix_is_identity(self, default_lexicon):
        assert strip_emote_prefix("Do you drink?", default_lexicon) == \
            "Do you drink?"


class TestGenerate:
    def test_unknown_variant_rejected(self, nlg_kb, nlg_bank, default_lexicon):
        with pytest.raises(ContractError):
            generate("freestyle", nlg_kb, nlg_bank, default_lexicon,
                     GOLDEN_CONTEXT, ControlCodes("gw"), random.Random(0))

    def test_unknown_finding_rejected(self, nlg_kb, nlg_bank, default_lexicon):
        with pytest.raises(NotFoundError):
            generate("expert", nlg_kb, nlg_bank, default_lexicon,
                     GOLDEN_CONTEXT, ControlCodes("zz"), random.Random(0))

    def test_expert_is_verbatim_and_emote_invariant(self, nlg_kb, nlg_bank,
                                                    default_lexicon):
        outputs = {
            generate("expert", nlg_kb, nlg_bank, default_lexicon, GOLDEN_CONTEXT,
                     ControlCodes("rh", emote=code), random.Random(seed))
            for code in CLASS_ORDER for seed in range(5)
        }
        assert outputs == {"Do you have headaches that come and go often?"}

    def test_paraphrase_samples_pool_without_prefix(self, nlg_kb, nlg_bank,
                                                    default_lexicon):
        pool = set(nlg_bank.serving_pool("gw"))
        seen = set()
        for seed in range(40):
            out = generate("paraphrase", nlg_kb, nlg_bank, default_lexicon,
                           GOLDEN_CONTEXT, ControlCodes("gw", emote="empathy"),
                           random.Random(seed))
            assert out in pool
            seen.add(out)
        assert len(seen) == 2  # both pool members get used

    def test_emotive_none_is_bare_pool_member(self, nlg_kb, nlg_bank,
                                               default_lexicon):
        out = generate("emotive", nlg_kb, nlg_bank, default_lexicon,
                       GOLDEN_CONTEXT, ControlCodes("gw"), random.Random(1))
        assert out in set(nlg_bank.serving_pool("gw"))

    def test_emotive_prefixes_a_lexicon_phrase(self, nlg_kb, nlg_bank,
                                               default_lexicon):
        pool = set(nlg_bank.serving_pool("gw"))
        phrases = default_lexicon.phrases_for("empathy")
        for seed in range(100):
            out = generate("emotive", nlg_kb, nlg_bank, default_lexicon,
                           GOLDEN_CONTEXT, ControlCodes("gw", emote="empathy"),
                           random.Random(seed))
            prefix = next((p for p in phrases if out.startswith(p)), None)
            assert prefix is not None, out
            assert strip_emote_prefix(out, default_lexicon) in pool

    def test_emotive_shape_is_phrase_period_space_question(self, nlg_kb, nlg_bank,
                                                           default_lexicon):
        rng = random.Random(3)
        out = generate("emotive", nlg_kb, nlg_bank, default_lexicon,
                       GOLDEN_CONTEXT, ControlCodes("gw", emote="apology"), rng)
        phrases = default_lexicon.phrases_for("apology")
        prefix = max((p for p in phrases if out.startswith(p)), key=len)
        rest = out[len(prefix):]
        assert rest.startswith(". ") or prefix.endswith((".", "!", "?"))
        assert rest.split(". ", 1)[-1] in set(nlg_bank.serving_pool("gw"))

    def test_same_seed_same_output(self, nlg_kb, nlg_bank, default_lexicon):
        args = (nlg_kb, nlg_bank, default_lexicon, GOLDEN_CONTEXT,
                ControlCodes("gw", emote="affirmative"))
        a = generate("emotive", *args, random.Random(17))
        b = generate("emotive", *args, random.Random(17))
        assert a == b


class TestConsistency:
    def test_bank_emitted_question_passes(self, nlg_bank):
        assert validate_consistency("Do you feel weak everywhere?", "gw", nlg_bank)

    def test_bare_expert_question_passes(self, nlg_bank):
        assert validate_consistency("Are you weak all over?", "gw", nlg_bank)

    def test_minor_inflection_passes(self, nlg_bank):
        assert validate_consistency("Are you weak all over", "gw", nlg_bank)

    def test_off_finding_question_fails(self, nlg_bank):
        assert not validate_consistency("Do you have a fever?", "gw", nlg_bank)

    def test_prefixed_generation_needs_the_lexicon(self, nlg_kb, nlg_bank,
                                                   default_lexicon):
        out = generate("emotive", nlg_kb, nlg_bank, default_lexicon,
                       GOLDEN_CONTEXT, ControlCodes("gw", emote="empathy"),
                       random.Random(5))
        assert validate_consistency(out, "gw", nlg_bank, lexicon=default_lexicon)
        assert not validate_consistency(out, "gw", nlg_bank)

    def test_every_emotive_generation_passes(self, nlg_kb, nlg_bank,
                                             default_lexicon):
        for seed in range(100):
            code = CLASS_ORDER[seed % 4]
            out = generate("emotive", nlg_kb, nlg_bank, default_lexicon,
                           GOLDEN_CONTEXT, ControlCodes("gw", emote=code),
                           random.Random(seed))
            assert validate_consistency(out, "gw", nlg_bank,
                                        lexicon=default_lexicon)

    def test_threshold_is_configurable(self, nlg_bank):
        near_miss = "Are you feeling weak all over?"  # scores 72 against the pool
        assert validate_consistency(near_miss, "gw", nlg_bank, threshold=70)
        assert not validate_consistency(near_miss, "gw", nlg_bank)  # default 90


class TestExternalVariant:
    def test_echoed_pool_question_returned_verbatim(self, nlg_kb, nlg_bank,
                                                    default_lexicon):
        client = ExternalNlgClient(
            "http://nlg.local", transport=lambda r: {"text": "Are you weak all over?"})
        out = generate("external", nlg_kb, nlg_bank, default_lexicon,
                       GOLDEN_CONTEXT, ControlCodes("gw", emote="empathy"),
                       random.Random(0), external_client=client)
        assert out == "Are you weak all over?"

    def test_request_carries_prompt_and_sampling_controls(self):
        sent = []

        def transport(request):
            sent.append(request)
            return {"text": "Anything else?"}

        client = ExternalNlgClient("http://nlg.local", max_tokens=48,
                                   temperature=0.5, transport=transport)
        assert external_generate(client, "PROMPT-LINE") == "Anything else?"
        assert sent[0] == {"prompt": "PROMPT-LINE", "max_tokens": 48,
                           "temperature": 0.5}

    def test_off_finding_reply_falls_back_with_warning(self, nlg_kb, nlg_bank,
                                                       default_lexicon):
        client = ExternalNlgClient(
            "http://nlg.local",
            transport=lambda r: {"text": "Do you enjoy gardening?"})
        with pytest.warns(UserWarning, match="consistency"):
            out = generate("external", nlg_kb, nlg_bank, default_lexicon,
                           GOLDEN_CONTEXT, ControlCodes("gw", emote="empathy"),
                           random.Random(0), external_client=client)
        assert validate_consistency(out, "gw", nlg_bank, lexicon=default_lexicon)

    def test_transport_failure_falls_back_with_warning(self, nlg_kb, nlg_bank,
                                                       default_lexicon):
        def broken(request):
            raise ExternalServiceError("timeout")

        client = ExternalNlgClient("http://nlg.local", transport=broken)
        with pytest.warns(UserWarning, match="unavailable"):
            out = generate("external", nlg_kb, nlg_bank, default_lexicon,
                           GOLDEN_CONTEXT, ControlCodes("gw"), random.Random(0),
                           external_client=client)
        assert out in set(nlg_bank.serving_pool("gw"))

    def test_blank_reply_is_a_service_error(self):
        client = ExternalNlgClient("http://nlg.local",
                                   transport=lambda r: {"text": ""})
        with pytest.raises(ExternalServiceError):
            external_generate(client, "x")

    def test_missing_client_rejected(self, nlg_kb, nlg_bank, default_lexicon):
        with pytest.raises(ContractError):
            generate("external", nlg_kb, nlg_bank, default_lexicon,
                     GOLDEN_CONTEXT, ControlCodes("gw"), random.Random(0))


def make_case(case_id, findings, rfe="f2"):
    return ClinicalCase(id=case_id, age_band="young adult (18 to 40 yrs)",
                        gender="female", rfe=rfe,
                        findings=tuple(Assertion(fid, polarity)
                                       for fid, polarity in findings),
                        final_margin=25.0)


class TestDatasetBuilder:
    def test_three_findings_yield_two_instances(self, toy_kb, default_lexicon):
        bank = seed_from_kb(toy_kb)
        case = make_case(0, [("f1", "present"), ("f3", "absent"),
                             ("f4", "present")])
        instances = build_conversation_dataset(
            [case], toy_kb, bank, default_lexicon, random.Random(0))
        assert len(instances) == 2
        _, codes0 = parse_prompt(instances[0].serialized_context)
        _, codes1 = parse_prompt(instances[1].serialized_context)
        assert codes0.next_finding == "f3"
        assert codes1.next_finding == "f4"

    def test_context_fields_track_the_case(self, toy_kb, default_lexicon):
        bank = seed_from_kb(toy_kb)
        case = make_case(0, [("f1", "present"), ("f3", "absent"),
                             ("f4", "present")])
        instances = build_conversation_dataset(
            [case], toy_kb, bank, default_lexicon, random.Random(0))
        first, _ = parse_prompt(instances[0].serialized_context)
        assert first.rfe == "sneezing"
        assert first.prior_findings == (("fever", True),)
        assert first.previous_response == "Yes"
        second, _ = parse_prompt(instances[1].serialized_context)
        assert second.prior_findings == (("fever", True),
                                         ("productive cough", False))
        assert second.previous_response == "No"

    def test_without_emotes_everything_is_bare(self, toy_kb, default_lexicon):
        bank = seed_from_kb(toy_kb)
        case = make_case(0, [("f1", "present"), ("f3", "absent"),
                             ("f4", "present")])
        instances = build_conversation_dataset(
            [case], toy_kb, bank, default_lexicon, random.Random(0),
            with_emotes=False)
        for instance in instances:
            _, codes = parse_prompt(instance.serialized_context)
            assert codes.emote == "none"
            assert instance.target_text in set(
                bank.serving_pool(codes.next_finding))

    def test_with_emotes_targets_match_their_code(self, toy_kb, default_lexicon):
        bank = seed_from_kb(toy_kb)
        cases = [make_case(i, [("f1", "present"), ("f3", "absent"),
                               ("f4", "present")]) for i in range(30)]
        instances = build_conversation_dataset(
            cases, toy_kb, bank, default_lexicon, random.Random(9))
        codes_seen = set()
        for instance in instances:
            _, codes = parse_prompt(instance.serialized_context)
            codes_seen.add(codes.emote)
            pool = set(bank.serving_pool(codes.next_finding))
            if codes.emote == "none":
                assert instance.target_text in pool
            else:
                phrases = default_lexicon.phrases_for(codes.emote)
                assert any(instance.target_text.startswith(p) for p in phrases)
        assert codes_seen == set(CLASS_ORDER)

    def test_invalid_case_is_skipped_with_report(self, toy_kb, default_lexicon):
        bank = seed_from_kb(toy_kb)
        good = make_case(1, [("f1", "present"), ("f2", "absent")], rfe="f3")
        bad = make_case(2, [("f3", "present"), ("f4", "present")])
        skipped = []
        instances = build_conversation_dataset(
            [good, bad], toy_kb, bank, default_lexicon, random.Random(0),
            skipped=skipped)
        assert len(instances) == 1
        assert len(skipped) == 1
        assert skipped[0][0] == 2
        assert any("exclusion" in violation for violation in skipped[0][1])

    def test_single_finding_case_yields_nothing(self, toy_kb, default_lexicon):
        bank = seed_from_kb(toy_kb)
        case = make_case(0, [("f1", "present")])
        assert build_conversation_dataset(
            [case], toy_kb, bank, default_lexicon, random.Random(0)) == []

    def test_deterministic_bytes(self, toy_kb, default_lexicon, tmp_path):
        bank = seed_from_kb(toy_kb)
        cases = [make_case(i, [("f1", "present"), ("f3", "absent"),
                               ("f4", "present")]) for i in range(10)]
        paths = []
        for run in range(2):
            instances = build_conversation_dataset(
                cases, toy_kb, bank, default_lexicon, random.Random(42))
            path = tmp_path / f"run{run}.jsonl"
            write_instances(path, instances)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_instance_count_over_simulated_cases(self, default_lexicon):
        from anamnesis.simulator import SimulatorConfig, simulate_dataset
        from anamnesis.synth import build_demo_kb

        kb = build_demo_kb()
        cases = simulate_dataset(
            kb, SimulatorConfig(margin_threshold=20.0, seed=8), 20)
        bank = seed_from_kb(kb)
        instances = build_conversation_dataset(
            cases, kb, bank, EmoteLexicon.default(), random.Random(0))
        assert len(instances) == sum(max(0, len(c.findings) - 1) for c in cases)

    def test_file_round_trip(self, toy_kb, default_lexicon, tmp_path):
        bank = seed_from_kb(toy_kb)
        case = make_case(0, [("f1", "present"), ("f3", "absent")])
        instances = build_conversation_dataset(
            [case], toy_kb, bank, default_lexicon, random.Random(3))
        path = tmp_path / "instances.jsonl"
        write_instances(path, instances)
        assert read_instances(path) == instances

    def test_malformed_instance_rejected(self):
        with pytest.raises((ContractError, SchemaError)):
            TrainingInstance(serialized_context="AGE=x", target_text="Q?")
        with pytest.raises((ContractError, SchemaError)):
            TrainingInstance(serialized_context=GOLDEN_LINE, target_text="")
