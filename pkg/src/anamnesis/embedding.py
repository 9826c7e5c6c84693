"""Text embedders for the emotion classifier.

The default embedder is a deterministic hashing bag-of-words: unigram and
bigram counts are hashed into a fixed-width vector with a hash-derived
sign.  It needs no model weights, is stable across runs and machines, and
is linearly separable enough for keyword-driven corpora.  A remote client
with the same interface can stand in when a neural sentence encoder is
available as a service.
"""

from __future__ import annotations

import hashlib
from collections.abc import Callable
from typing import Protocol

import numpy as np

from .errors import ExternalServiceError
from .text import normalize

DEFAULT_DIM = 384


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _features(text: str) -> list[str]:
    tokens = normalize(text).split()
    return tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]


class HashingEmbedder:
    """Signed feature hashing over unigram and bigram counts."""

    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim

    @property
    def spec(self) -> dict:
        return {"kind": "hashing", "dim": self.dim}

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for feature in _features(text):
            digest = hashlib.md5(feature.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:8], "big") % self.dim
            sign = 1.0 if digest[8] % 2 == 0 else -1.0
            vec[bucket] += sign
        return vec


Transport = Callable[[dict], dict]


class RemoteEmbedder:
    """Client for an embedding service returning fixed-width vectors.

    The transport callable is injectable for offline tests; the default
    posts JSON over HTTP.
    """

    def __init__(self, endpoint: str, dim: int,
                 transport: Transport | None = None,
                 timeout: float = 10.0) -> None:
        self._endpoint = endpoint
        self.dim = dim
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
                f"embedding service at {self._endpoint} failed: {exc}") from exc

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        response = self._transport({"texts": list(texts)})
        vectors = response.get("vectors") if isinstance(response, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ExternalServiceError(
                "embedding service returned a malformed vector batch")
        out = []
        for row in vectors:
            arr = np.asarray(row, dtype=np.float64)
            if arr.shape != (self.dim,) or not np.all(np.isfinite(arr)):
                raise ExternalServiceError(
                    f"embedding service returned a vector of shape {arr.shape}, "
                    f"expected ({self.dim},)")
            out.append(arr)
        return out

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]
