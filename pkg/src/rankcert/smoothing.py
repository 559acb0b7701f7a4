"""Random word-substitution smoothing and its Monte Carlo estimation.

A document ``d = (w_1, ..., w_M)`` induces a product perturbation
distribution: every position ``i`` is resampled independently and uniformly
from its perturbation set ``T_{w_i}``. The smoothed score of a base model
``f`` is the expectation of ``f(q, R)`` over that distribution, estimated
either exactly (full enumeration of small spaces) or by Monte Carlo with a
Hoeffding confidence radius per estimate.

Randomness is derived, never shared: a root seed plus hashes of the query
id, document id, and token sequence feed a seed sequence that is split into
one child stream per sample. Estimates are therefore reproducible and safe
to compute concurrently across queries and documents.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass
from typing import Iterator, MutableMapping, Sequence

import numpy as np

from .corpus import Document, Query, RankedList, make_ranked
from .lexicon import Lexicon
from .rankers import ScoreModel

DEFAULT_ENUMERATION_CAP = 10**6

_SEED_MASK = (1 << 64) - 1


def hoeffding_radius(n: int, alpha: float) -> float:
    """Two-sided Hoeffding deviation bound for a mean of [0, 1] samples:
    ``sqrt(ln(2 / alpha) / (2 n))`` holds with probability >= 1 - alpha."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


@dataclass(frozen=True)
class SmoothedScore:
    """A smoothed-score estimate with its confidence radius."""

    mean: float
    n: int
    alpha: float
    radius: float

    @classmethod
    def from_mc(cls, mean: float, n: int, alpha: float) -> "SmoothedScore":
        return cls(mean=mean, n=n, alpha=alpha, radius=hoeffding_radius(n, alpha))

    @classmethod
    def exact(cls, mean: float) -> "SmoothedScore":
        return cls(mean=mean, n=0, alpha=0.0, radius=0.0)

    @property
    def lower(self) -> float:
        return self.mean - self.radius

    @property
    def upper(self) -> float:
        return self.mean + self.radius


def _entropy(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def token_fingerprint(tokens: Sequence[str]) -> int:
    return _entropy("\x00".join(tokens))


def derive_streams(
    root_seed: int, query_id: str, doc_id: str, tokens: Sequence[str], n: int
) -> list[np.random.Generator]:
    """One independent generator per sample index, reproducible from the
    (root seed, query id, doc id, token sequence) tuple."""
    ss = np.random.SeedSequence(
        [root_seed & _SEED_MASK, _entropy(query_id), _entropy(doc_id), token_fingerprint(tokens)]
    )
    return [np.random.default_rng(child) for child in ss.spawn(n)]


@dataclass(frozen=True)
class PerturbationSampler:
    """Draws documents from the product perturbation distribution."""

    lexicon: Lexicon
    root_seed: int = 0

    def streams(self, query_id: str, doc: Document, n: int) -> list[np.random.Generator]:
        return derive_streams(self.root_seed, query_id, doc.id, doc.tokens, n)

    def sample(self, doc: Document, rng: np.random.Generator) -> Document:
        sets = [self.lexicon.perturb_set(w) for w in doc.tokens]
        sizes = np.fromiter((len(s) for s in sets), dtype=np.int64, count=len(sets))
        picks = rng.integers(0, sizes)
        return doc.with_tokens(s[i] for s, i in zip(sets, picks))


def sample_perturbed(doc: Document, lexicon: Lexicon, rng: np.random.Generator) -> Document:
    """One draw from the perturbation distribution around ``doc``."""
    return PerturbationSampler(lexicon).sample(doc, rng)


def perturbation_prob(doc: Document, perturbed: Document, lexicon: Lexicon) -> float:
    """Probability of drawing ``perturbed`` from the distribution around
    ``doc``: the product over positions of ``1/|T_{w_i}|`` when the token is
    in ``T_{w_i}``, else zero."""
    if perturbed.length != doc.length:
        raise ValueError(
            f"length mismatch: {doc.length} vs {perturbed.length} "
            f"({doc.id!r} vs {perturbed.id!r})"
        )
    prob = 1.0
    for w, r in zip(doc.tokens, perturbed.tokens):
        t_w = lexicon.perturb_set(w)
        if r not in t_w:
            return 0.0
        prob /= len(t_w)
    return prob


def perturbation_space_size(doc: Document, lexicon: Lexicon) -> int:
    return lexicon.space_size(doc.tokens)


def enumerate_perturbations(
    doc: Document, lexicon: Lexicon, cap: int = DEFAULT_ENUMERATION_CAP
) -> Iterator[tuple[str, ...]]:
    """All joint perturbations of ``doc`` as token tuples, in a fixed order."""
    size = perturbation_space_size(doc, lexicon)
    if size > cap:
        raise ValueError(
            f"perturbation space of {doc.id!r} has {size} outcomes, above the cap "
            f"of {cap}; use Monte Carlo estimation instead"
        )
    return itertools.product(*(lexicon.perturb_set(w) for w in doc.tokens))


def smoothed_score_mc(
    model: ScoreModel,
    query: Query,
    doc: Document,
    lexicon: Lexicon,
    n: int = 1000,
    alpha: float = 0.05,
    root_seed: int = 0,
) -> SmoothedScore:
    """Monte Carlo estimate of the smoothed score from ``n`` i.i.d. draws.

    The sample scores are reduced in a fixed order, so the result is
    bit-stable regardless of how callers parallelize across documents.
    """
    sampler = PerturbationSampler(lexicon, root_seed)
    streams = sampler.streams(query.id, doc, n)
    scores = np.empty(n, dtype=float)
    for i, rng in enumerate(streams):
        scores[i] = model.score(query, sampler.sample(doc, rng))
    return SmoothedScore.from_mc(float(scores.mean()), n, alpha)


def smoothed_score_exact(
    model: ScoreModel,
    query: Query,
    doc: Document,
    lexicon: Lexicon,
    cap: int = DEFAULT_ENUMERATION_CAP,
    _cache: MutableMapping[tuple[str, tuple[str, ...]], float] | None = None,
) -> float:
    """Exact smoothed score by full enumeration of the perturbation space.

    Every joint outcome is equally likely under the product distribution, so
    the expectation is the plain mean over outcomes. ``_cache`` may be shared
    across calls to memoize base scores by (query id, token tuple).
    """
    total = 0.0
    count = 0
    for tokens in enumerate_perturbations(doc, lexicon, cap):
        if _cache is None:
            s = model.score(query, Document(doc.id, tokens))
        else:
            key = (query.id, tokens)
            s = _cache.get(key)
            if s is None:
                s = model.score(query, Document(doc.id, tokens))
                _cache[key] = s
        total += s
        count += 1
    return total / count


def smooth_rank(
    model: ScoreModel,
    query: Query,
    docs: Sequence[Document],
    lexicon: Lexicon,
    n: int | None = 1000,
    alpha: float = 0.05,
    root_seed: int = 0,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> RankedList:
    """Rank candidates by smoothed score (Monte Carlo, or exact if ``n`` is
    None). Ties break by doc id ascending."""
    if not docs:
        raise ValueError("cannot rank an empty candidate list")
    scored: list[tuple[str, float]] = []
    for doc in docs:
        if n is None:
            mean = smoothed_score_exact(model, query, doc, lexicon, cap)
        else:
            mean = smoothed_score_mc(model, query, doc, lexicon, n, alpha, root_seed).mean
        scored.append((doc.id, mean))
    return make_ranked(query.id, scored)


class SmoothedModel(ScoreModel):
    """Score model wrapper exposing the smoothed score as ``score``.

    With ``n=None`` the expectation is computed exactly by enumeration
    (bounded by ``cap``); otherwise by Monte Carlo with per-document derived
    streams. Results are memoized by (query id, token tuple); concurrent
    readers may race on the memo but always write identical values.
    """

    def __init__(
        self,
        base: ScoreModel,
        lexicon: Lexicon,
        n: int | None = None,
        alpha: float = 0.05,
        root_seed: int = 0,
        cap: int = DEFAULT_ENUMERATION_CAP,
    ) -> None:
        self.base = base
        self.lexicon = lexicon
        self.n = n
        self.alpha = alpha
        self.root_seed = root_seed
        self.cap = cap
        self._memo: dict[tuple[str, tuple[str, ...]], float] = {}
        self._base_scores: dict[tuple[str, tuple[str, ...]], float] = {}

    def score(self, query: Query, doc: Document) -> float:
        key = (query.id, doc.tokens)
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        if self.n is None:
            value = smoothed_score_exact(
                self.base, query, doc, self.lexicon, self.cap, _cache=self._base_scores
            )
        else:
            value = smoothed_score_mc(
                self.base, query, doc, self.lexicon, self.n, self.alpha, self.root_seed
            ).mean
        self._memo[key] = value
        return value

    def smoothed(self, query: Query, doc: Document) -> SmoothedScore:
        if self.n is None:
            return SmoothedScore.exact(self.score(query, doc))
        return SmoothedScore.from_mc(self.score(query, doc), self.n, self.alpha)
