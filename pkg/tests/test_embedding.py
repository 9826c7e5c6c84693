"""Hashing embedder determinism and the remote embedding client."""

import numpy as np
import pytest

from anamnesis.embedding import HashingEmbedder, RemoteEmbedder
from anamnesis.errors import ExternalServiceError


class TestHashingEmbedder:
    def test_deterministic(self):
        e = HashingEmbedder()
        a = e.embed("Do you have a fever?")
        b = e.embed("Do you have a fever?")
        assert np.array_equal(a, b)

    def test_dim_and_finite(self):
        e = HashingEmbedder(dim=64)
        v = e.embed("sorry to hear that")
        assert v.shape == (64,)
        assert np.all(np.isfinite(v))

    def test_counts_accumulate(self):
        e = HashingEmbedder()
        # "persistent dry cough" carries 3 unigrams and 2 bigrams
        v = e.embed("persistent dry cough")
        assert np.abs(v).sum() == pytest.approx(5.0)

    def test_empty_text_is_zero_vector(self):
        v = HashingEmbedder().embed("   ")
        assert np.all(v == 0.0)

    def test_distinct_texts_distinct_vectors(self):
        e = HashingEmbedder()
        assert not np.array_equal(e.embed("chest pain"), e.embed("headache"))

    def test_word_order_matters_through_bigrams(self):
        e = HashingEmbedder()
        assert not np.array_equal(e.embed("no pain"), e.embed("pain no"))

    def test_case_and_punctuation_insensitive(self):
        e = HashingEmbedder()
        assert np.array_equal(e.embed("Chest Pain!"), e.embed("chest pain"))

    def test_rejects_nonpositive_dim(self):
        with pytest.raises(ValueError):
            HashingEmbedder(dim=0)


class TestRemoteEmbedder:
    def test_batch_request_and_response(self):
        sent = []

        def transport(request):
            sent.append(request)
            return {"vectors": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]}

        client = RemoteEmbedder("http://embed.local", dim=3, transport=transport)
        vectors = client.embed_batch(["alpha", "beta"])
        assert sent[0] == {"texts": ["alpha", "beta"]}
        assert np.array_equal(vectors[0], np.array([1.0, 0.0, 0.0]))
        assert np.array_equal(vectors[1], np.array([0.0, 1.0, 0.0]))

    def test_single_embed(self):
        client = RemoteEmbedder("http://embed.local", dim=2,
                                transport=lambda r: {"vectors": [[0.5, 0.5]]})
        assert client.embed("x").tolist() == [0.5, 0.5]

    def test_wrong_width_rejected(self):
        client = RemoteEmbedder("http://embed.local", dim=4,
                                transport=lambda r: {"vectors": [[1.0, 2.0]]})
        with pytest.raises(ExternalServiceError):
            client.embed("x")

    def test_missing_vectors_rejected(self):
        client = RemoteEmbedder("http://embed.local", dim=2,
                                transport=lambda r: {"error": "nope"})
        with pytest.raises(ExternalServiceError):
            client.embed("x")

    def test_wrong_count_rejected(self):
        client = RemoteEmbedder("http://embed.local", dim=2,
                                transport=lambda r: {"vectors": []})
        with pytest.raises(ExternalServiceError):
            client.embed("x")

    def test_nonfinite_rejected(self):
        client = RemoteEmbedder("http://embed.local", dim=2,
                                transport=lambda r: {"vectors": [[1.0, float("nan")]]})
        with pytest.raises(ExternalServiceError):
            client.embed("x")
