"""Relevance scorers mapping (query, document) pairs into [0, 1]."""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Document, Query, RankedList, make_ranked
from .lexicon import EmbeddingTable


class ScoreModel(ABC):
    """Deterministic relevance scorer with outputs in [0, 1].

    Implementations must be safe for concurrent ``score`` calls once
    constructed.
    """

    @abstractmethod
    def score(self, query: Query, doc: Document) -> float:
        raise NotImplementedError


def rank(model: ScoreModel, query: Query, candidates: Sequence[Document]) -> RankedList:
    """Score all candidates and sort: score descending, doc id ascending."""
    if not candidates:
        raise ValueError("cannot rank an empty candidate list")
    return make_ranked(query.id, [(d.id, model.score(query, d)) for d in candidates])


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-min(z, 500.0)))
    ez = math.exp(max(z, -500.0))
    return ez / (1.0 + ez)


@dataclass(frozen=True)
class Bm25Model(ScoreModel):
    """BM25 with a monotone squash ``s -> s / (s + c)`` into [0, 1).

    The idf is the non-negative variant ``ln(1 + (N - df + 0.5)/(df + 0.5))``
    so raw scores stay >= 0 and the squash stays in range. Repeated query
    terms are counted once. The squash constant ``c`` is the mean raw score
    over a calibration pool (see :meth:`calibrated`); scoring before
    calibration raises.
    """

    k1: float
    b: float
    doc_freq: Mapping[str, int]
    n_docs: int
    avg_len: float
    squash_c: float | None = None

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise ValueError(f"k1 must be positive, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")

    @classmethod
    def from_corpus(
        cls, corpus: Mapping[str, Document], k1: float = 0.9, b: float = 0.4
    ) -> "Bm25Model":
        if not corpus:
            raise ValueError("cannot build BM25 statistics from an empty corpus")
        df: Counter[str] = Counter()
        total_len = 0
        for doc in corpus.values():
            total_len += doc.length
            for term in set(doc.tokens):
                df[term] += 1
        return cls(
            k1=k1,
            b=b,
            doc_freq=dict(df),
            n_docs=len(corpus),
            avg_len=total_len / len(corpus),
        )

    def idf(self, term: str) -> float:
        df = self.doc_freq.get(term, 0)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def raw_score(self, query: Query, doc: Document) -> float:
        if self.n_docs <= 0 or self.avg_len <= 0:
            raise RuntimeError("BM25 statistics not initialized; build from a corpus first")
        tf = Counter(doc.tokens)
        norm = self.k1 * (1.0 - self.b + self.b * doc.length / self.avg_len)
        total = 0.0
        for term in sorted(set(query.tokens)):
            f = tf.get(term, 0)
            if f == 0:
                continue
            total += self.idf(term) * f * (self.k1 + 1.0) / (f + norm)
        return total

    def score(self, query: Query, doc: Document) -> float:
        if self.squash_c is None:
            raise RuntimeError(
                "BM25 squash constant not calibrated; call calibrated() with a candidate pool"
            )
        raw = self.raw_score(query, doc)
        return raw / (raw + self.squash_c)

    def calibrated(self, pairs: Iterable[tuple[Query, Document]]) -> "Bm25Model":
        """Copy of this model with ``c`` set to the mean raw score of
        ``pairs`` (falls back to 1.0 when the mean is not positive)."""
        raws = [self.raw_score(q, d) for q, d in pairs]
        if not raws:
            raise ValueError("calibration pool is empty")
        c = sum(raws) / len(raws)
        return replace(self, squash_c=c if c > 0 else 1.0)

    def to_cache_dict(self, corpus_hash: str) -> dict:
        return {
            "type": "bm25-cache",
            "corpus_hash": corpus_hash,
            "k1": self.k1,
            "b": self.b,
            "n_docs": self.n_docs,
            "avg_len": self.avg_len,
            "doc_freq": dict(sorted(self.doc_freq.items())),
        }

    @classmethod
    def from_cache_dict(cls, payload: Mapping, corpus_hash: str) -> "Bm25Model":
        if payload.get("corpus_hash") != corpus_hash:
            raise ValueError("BM25 cache was built from a different corpus")
        return cls(
            k1=float(payload["k1"]),
            b=float(payload["b"]),
            doc_freq={k: int(v) for k, v in payload["doc_freq"].items()},
            n_docs=int(payload["n_docs"]),
            avg_len=float(payload["avg_len"]),
        )


FEATURE_NAMES = ("embedding_cosine", "query_coverage", "match_density")


@dataclass(frozen=True)
class LinearEmbedScorer(ScoreModel):
    """Sigmoid of a linear function of embedding and term-overlap features.

    Features: cosine of mean-pooled query/document embeddings, fraction of
    distinct query terms present in the document, and fraction of document
    tokens that are query terms.
    """

    weights: np.ndarray
    bias: float
    embeddings: EmbeddingTable

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"weights must have shape ({len(FEATURE_NAMES)},), got {w.shape}")
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise ValueError("parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def initial(cls, embeddings: EmbeddingTable) -> "LinearEmbedScorer":
        return cls(weights=np.zeros(len(FEATURE_NAMES)), bias=0.0, embeddings=embeddings)

    def _pool(self, tokens: Sequence[str]) -> np.ndarray:
        vecs = [self.embeddings[t] for t in tokens if t in self.embeddings]
        if not vecs:
            return np.zeros(self.embeddings.dim)
        return np.mean(vecs, axis=0)

    def features(self, query: Query, doc: Document) -> np.ndarray:
        qv = self._pool(query.tokens)
        dv = self._pool(doc.tokens)
        qn = float(np.linalg.norm(qv))
        dn = float(np.linalg.norm(dv))
        cos = float(np.dot(qv, dv) / (qn * dn)) if qn > 0 and dn > 0 else 0.0
        q_terms = set(query.tokens)
        coverage = len(q_terms.intersection(doc.tokens)) / len(q_terms)
        density = sum(1 for t in doc.tokens if t in q_terms) / doc.length
        return np.array([cos, coverage, density])

    def decision(self, query: Query, doc: Document) -> float:
        return float(np.dot(self.weights, self.features(query, doc))) + self.bias

    def score(self, query: Query, doc: Document) -> float:
        return sigmoid(self.decision(query, doc))

    def with_params(self, weights: np.ndarray, bias: float) -> "LinearEmbedScorer":
        return LinearEmbedScorer(
            weights=np.array(weights, dtype=float), bias=float(bias), embeddings=self.embeddings
        )

    def to_json_dict(self) -> dict:
        return {
            "type": "linear",
            "features": list(FEATURE_NAMES),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping, embeddings: EmbeddingTable) -> "LinearEmbedScorer":
        if payload.get("type") != "linear":
            raise ValueError(f"not a linear scorer payload: {payload.get('type')!r}")
        if list(payload.get("features", FEATURE_NAMES)) != list(FEATURE_NAMES):
            raise ValueError("scorer payload uses an unknown feature set")
        return cls(
            weights=np.array(payload["weights"], dtype=float),
            bias=float(payload["bias"]),
            embeddings=embeddings,
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
