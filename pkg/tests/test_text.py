import pytest
from hypothesis import given
from hypothesis import strategies as st

from anamnesis.text import (
    Segment,
    best_fuzzy_match,
    fuzzy_score,
    levenshtein,
    normalize,
    split_on_punctuation,
)


def slow_levenshtein(a: str, b: str) -> int:
    """Independent oracle: plain recursive definition with memoization."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def rec(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            rec(i - 1, j) + 1,
            rec(i, j - 1) + 1,
            rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return rec(len(a), len(b))


class TestNormalize:
    def test_lowercase_punctuation_whitespace(self):
        assert normalize("  Got   it!! ") == "got it"
        assert normalize("I'm sorry") == "im sorry"
        assert normalize("...") == ""

    def test_idempotent(self):
        assert normalize(normalize("Okay, I'm sorry to hear")) == normalize("Okay, I'm sorry to hear")


class TestLevenshtein:
    # Expected values frozen from the recursive oracle above.
    @pytest.mark.parametrize("a,b,expected", [
        ("kitten", "sitting", 3),
        ("", "abc", 3),
        ("abc", "abc", 0),
        ("flaw", "lawn", 2),
    ])
    def test_known_pairs(self, a, b, expected):
        assert slow_levenshtein(a, b) == expected
        assert levenshtein(a, b) == expected

    @given(st.text(max_size=12), st.text(max_size=12))
    def test_matches_oracle(self, a, b):
        assert levenshtein(a, b) == slow_levenshtein(a, b)

    @given(st.text(max_size=16), st.text(max_size=16))
    def test_symmetric(self, a, b):
        assert levenshtein(a, b) == levenshtein(b, a)


class TestFuzzyScore:
    def test_identical_after_normalization(self):
        assert fuzzy_score("Got it", "got it!") == 100

    def test_kitten_sitting(self):
        # distance 3 over max length 7: round(100 * 4/7) = 57
        assert fuzzy_score("kitten", "sitting") == 57

    def test_empty_cases(self):
        assert fuzzy_score("", "abc") == 0
        assert fuzzy_score("", "") == 100
        assert fuzzy_score("?!", ".") == 100  # both normalize to empty

    @given(st.text(max_size=20), st.text(max_size=20))
    def test_range_and_symmetry(self, a, b):
        score = fuzzy_score(a, b)
        assert 0 <= score <= 100
        assert score == fuzzy_score(b, a)

    @given(st.text(max_size=20))
    def test_self_similarity(self, a):
        assert fuzzy_score(a, a) == 100


class TestSplitOnPunctuation:
    def test_basic(self):
        segments = split_on_punctuation("Okay. Do you smoke?")
        assert [s.text for s in segments] == ["Okay.", " Do you smoke?"]
        assert segments[0] == Segment("Okay.", 0, 5)

    def test_no_punctuation_single_segment(self):
        segments = split_on_punctuation("no punctuation here")
        assert [s.text for s in segments] == ["no punctuation here"]

    def test_all_terminators(self):
        segments = split_on_punctuation("A? B! C; D.")
        assert [s.text for s in segments] == ["A?", " B!", " C;", " D."]

    def test_empty_string(self):
        assert split_on_punctuation("") == []

    @given(st.text(max_size=40))
    def test_exact_reconstruction(self, text):
        segments = split_on_punctuation(text)
        assert "".join(s.text for s in segments) == text
        for segment in segments:
            assert text[segment.start:segment.end] == segment.text
            # any prefix is recoverable from the offset alone
            assert text[:segment.start] + segment.text == text[:segment.end]


class TestBestFuzzyMatch:
    def test_exact_hit(self):
        key, score, suggestions = best_fuzzy_match(
            "fever", {"f1": "fever", "f2": "sneezing"})
        assert key == "f1" and score == 100
        assert suggestions[0] == "f1"

    def test_below_threshold_gives_suggestions(self):
        key, score, suggestions = best_fuzzy_match(
            "zzzz", {"f1": "fever", "f2": "sneezing", "f3": "productive cough"})
        assert key is None
        assert len(suggestions) == 3
