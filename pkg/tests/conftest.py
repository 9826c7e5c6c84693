import pathlib

import pytest

from anamnesis.emotes import EmoteLexicon
from anamnesis.kb import load_kb

REPO_ROOT = pathlib.Path(__file__).resolve().parents[1]
TOY_KB_PATH = REPO_ROOT / "data" / "toy.kb"
LEXICON_PATH = REPO_ROOT / "data" / "emote_lexicon.jsonl"


@pytest.fixture(scope="session")
def toy_kb_path():
    return TOY_KB_PATH


@pytest.fixture(scope="session")
def toy_kb():
    return load_kb(TOY_KB_PATH)


@pytest.fixture(scope="session")
def lexicon_path():
    return LEXICON_PATH


@pytest.fixture(scope="session")
def lexicon():
    return EmoteLexicon.load(LEXICON_PATH)
