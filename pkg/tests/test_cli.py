"""Command line interface, driven through main(argv)."""

import io
import json

import pytest

from anamnesis import cli
from anamnesis.cli import build_service, main
from anamnesis.config import Settings
from anamnesis.emotes import (
    EditedQuestionRecord,
    EmoteLexicon,
    read_emote_rows,
    write_edit_records,
    write_emote_rows,
)
from anamnesis.nlg import parse_prompt, read_instances
from anamnesis.simulator import read_cases
from anamnesis.synth import build_demo_kb, make_emotion_corpus


@pytest.fixture(scope="module")
def demo_kb():
    return build_demo_kb()


@pytest.fixture(scope="module")
def cases_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "cases.jsonl"
    code = main(["simulate", "--kb", "demo", "--out", str(out),
                 "--cases", "20", "--seed", "1"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def emote_rows_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-rows") / "rows.jsonl"
    rows = make_emotion_corpus(160, seed=5, lexicon=EmoteLexicon.default())
    write_emote_rows(rows, out)
    return out


@pytest.fixture(scope="module")
def model_file(tmp_path_factory, emote_rows_file):
    out = tmp_path_factory.mktemp("cli-model") / "model.json"
    code = main(["train-emotion", "--data", str(emote_rows_file),
                 "--out", str(out), "--k", "8", "--dim", "64"])
    assert code == 0
    return out


class TestSimulate:
    def test_writes_requested_cases(self, cases_file, demo_kb, capsys):
        cases = read_cases(cases_file, demo_kb)
        assert len(cases) == 20
        assert all(case.final_margin >= 20.0 for case in cases)

    def test_reports_what_it_wrote(self, tmp_path, capsys):
        out = tmp_path / "c.jsonl"
        main(["simulate", "--kb", "demo", "--out", str(out), "--cases", "3"])
        assert f"wrote 3 cases to {out}" in capsys.readouterr().out

    def test_seed_changes_output(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        main(["simulate", "--kb", "demo", "--out", str(a), "--cases", "5",
              "--seed", "1"])
        main(["simulate", "--kb", "demo", "--out", str(b), "--cases", "5",
              "--seed", "2"])
        assert a.read_bytes() != b.read_bytes()

    def test_same_seed_reproduces_bytes(self, tmp_path, cases_file):
        again = tmp_path / "again.jsonl"
        main(["simulate", "--kb", "demo", "--out", str(again),
              "--cases", "20", "--seed", "1"])
        assert again.read_bytes() == cases_file.read_bytes()


class TestBuildDataset:
    def test_chain_from_simulated_cases(self, tmp_path, cases_file, demo_kb,
                                        capsys):
        out = tmp_path / "instances.jsonl"
        code = main(["build-dataset", "--kb", "demo",
                     "--cases", str(cases_file), "--out", str(out)])
        assert code == 0
        cases = read_cases(cases_file, demo_kb)
        expected = sum(max(0, len(case.findings) - 1) for case in cases)
        instances = read_instances(out)
        assert len(instances) == expected
        stdout = capsys.readouterr().out
        assert f"wrote {expected} instances" in stdout
        assert "(0 cases skipped)" in stdout

    def test_no_emotes_flag(self, tmp_path, cases_file):
        out = tmp_path / "bare.jsonl"
        main(["build-dataset", "--kb", "demo", "--cases", str(cases_file),
              "--out", str(out), "--no-emotes"])
        codes = {parse_prompt(i.serialized_context)[1].emote
                 for i in read_instances(out)}
        assert codes == {"none"}


class TestTrainAndEval:
    def test_train_writes_model(self, model_file, capsys):
        payload = json.loads(model_file.read_text())
        assert payload  # non-empty serialized model

    def test_eval_prints_report(self, model_file, emote_rows_file, capsys):
        code = main(["eval-emotion", "--model", str(model_file),
                     "--data", str(emote_rows_file)])
        assert code == 0
        report = capsys.readouterr().out
        assert "accuracy" in report
        assert "macro" in report

    def test_train_reports_row_count(self, tmp_path, emote_rows_file,
                                     capsys):
        out = tmp_path / "m.json"
        main(["train-emotion", "--data", str(emote_rows_file),
              "--out", str(out), "--k", "4", "--dim", "32"])
        assert "trained on 160 rows" in capsys.readouterr().out


class TestMineEmotes:
    def test_mines_rows_from_edits(self, tmp_path, capsys):
        lexicon = EmoteLexicon.default()
        empathy_phrase = lexicon.phrases_for("empathy")[0]
        records = [
            EditedQuestionRecord(
                previous_question="Do you have a fever?",
                patient_response="yes, and it is awful",
                default_question="Do you have chills?",
                edited_question=f"{empathy_phrase}. Do you have chills?"),
            EditedQuestionRecord(
                previous_question="Any cough?",
                patient_response="no",
                default_question="Are you short of breath?",
                edited_question="Are you short of breath?"),
        ]
        src = tmp_path / "edits.jsonl"
        write_edit_records(records, src)
        out = tmp_path / "mined.jsonl"
        code = main(["mine-emotes", "--records", str(src),
                     "--out", str(out)])
        assert code == 0
        rows = read_emote_rows(out)
        assert len(rows) == 2
        assert {row.code for row in rows} == {"empathy", "none"}
        stdout = capsys.readouterr().out
        assert "mined 2 rows from 2 edit records" in stdout
        assert "0 unmatched" in stdout

    def test_unmatched_phrase_counted_for_review(self, tmp_path, capsys):
        records = [EditedQuestionRecord(
            previous_question="Any cough?", patient_response="yes",
            default_question="Do you smoke?",
            edited_question="Gosh golly wow. Do you smoke?")]
        src = tmp_path / "edits.jsonl"
        write_edit_records(records, src)
        out = tmp_path / "mined.jsonl"
        main(["mine-emotes", "--records", str(src), "--out", str(out)])
        assert "1 unmatched" in capsys.readouterr().out


class TestChat:
    def _run(self, monkeypatch, answers, argv):
        monkeypatch.setattr("sys.stdin", io.StringIO(answers))
        return main(argv)

    def test_yes_conversation_concludes(self, monkeypatch, capsys):
        code = self._run(monkeypatch, "yes\n" * 12,
                         ["chat", "--kb", "demo", "sign 00-0"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("q: ") == 7
        assert "concluded: margin_reached" in out
        assert "differential:" in out

    def test_clarification_then_answer(self, monkeypatch, capsys):
        code = self._run(monkeypatch, "potato\n" + "yes\n" * 12,
                         ["chat", "--kb", "demo", "sign 00-0"])
        assert code == 0
        assert "please answer yes or no" in capsys.readouterr().out

    def test_script_runs_out(self, monkeypatch, capsys):
        code = self._run(monkeypatch, "yes\n",
                         ["chat", "--kb", "demo", "sign 00-0"])
        assert code == 1
        assert "without a conclusion" in capsys.readouterr().out

    def test_unresolvable_rfe_is_an_error(self, monkeypatch, capsys):
        code = self._run(monkeypatch, "", ["chat", "--kb", "demo", "zzz"])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestServe:
    def test_build_service_demo(self):
        from fastapi.testclient import TestClient

        app = build_service(Settings(kb_path="demo", variant="expert"))
        with TestClient(app) as client:
            health = client.get("/healthz").json()
        assert health == {"status": "ok", "diseases": 10, "findings": 66}

    def test_serve_passes_flags_through(self, monkeypatch):
        captured = {}

        def fake_run_server(app, host, port):
            captured.update(app=app, host=host, port=port)

        monkeypatch.setattr("anamnesis.service.run_server", fake_run_server)
        code = main(["serve", "--kb", "demo", "--port", "8123",
                     "--host", "0.0.0.0", "--variant", "expert"])
        assert code == 0
        assert captured["port"] == 8123
        assert captured["host"] == "0.0.0.0"
        engine = captured["app"].state.engine
        assert engine.default_config.variant == "expert"

    def test_serve_config_file_with_flag_override(self, tmp_path,
                                                  monkeypatch):
        config = tmp_path / "settings.json"
        config.write_text(json.dumps({"kb_path": "demo", "port": 9001,
                                      "variant": "paraphrase"}))
        captured = {}
        monkeypatch.setattr(
            "anamnesis.service.run_server",
            lambda app, host, port: captured.update(port=port, app=app))
        main(["serve", "--config", str(config), "--port", "8200"])
        assert captured["port"] == 8200  # flag beats file
        variant = captured["app"].state.engine.default_config.variant
        assert variant == "paraphrase"  # file beats default


class TestErrors:
    def test_missing_kb_file_is_reported(self, tmp_path, capsys):
        code = main(["simulate", "--kb", str(tmp_path / "nope.kb"),
                     "--out", str(tmp_path / "o.jsonl"), "--cases", "1"])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_subcommand_exits_two(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["frobnicate"])
        assert excinfo.value.code == 2

    def test_no_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_cli_module_importable_as_script_entry(self):
        assert callable(cli.main)
