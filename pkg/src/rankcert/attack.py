"""Synonym-substitution rank attackers.

Two adversaries against the same threat model (substitute at most
``floor(delta * M)`` words of a document, each with one of its synonyms):

* ``brute_force_attack`` enumerates every admissible substitution and is the
  ground-truth oracle used to validate certificates;
* ``greedy_attack`` applies the best single (position, synonym) improvement
  until a substitution budget is exhausted, a cheap stand-in for published
  black-box attacks at evaluation time.

Documents ranked in the top K are never attacked; callers select targets
from the tail of the ranked list.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Mapping

from .corpus import Document, Query, RankedList
from .lexicon import Lexicon
from .rankers import ScoreModel

DEFAULT_SD_CAP = 10**6


@dataclass(frozen=True)
class AttackOutcome:
    """Result of attacking one document of one ranked list."""

    query_id: str
    doc_id: str
    original_rank: int
    best_rank_after: int
    best_doc: Document
    best_score: float
    success: bool
    substitutions: tuple[tuple[int, str, str], ...]

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "original_rank": self.original_rank,
            "best_rank_after": self.best_rank_after,
            "best_score": self.best_score,
            "success": self.success,
            "best_tokens": list(self.best_doc.tokens),
            "substitutions": [[p, old, new] for p, old, new in self.substitutions],
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping) -> "AttackOutcome":
        return cls(
            query_id=str(payload["query_id"]),
            doc_id=str(payload["doc_id"]),
            original_rank=int(payload["original_rank"]),
            best_rank_after=int(payload["best_rank_after"]),
            best_doc=Document(str(payload["doc_id"]), tuple(payload["best_tokens"])),
            best_score=float(payload["best_score"]),
            success=bool(payload["success"]),
            substitutions=tuple(
                (int(p), str(old), str(new)) for p, old, new in payload["substitutions"]
            ),
        )


def substitutions_between(doc: Document, adv: Document) -> tuple[tuple[int, str, str], ...]:
    """(position, original word, new word) for every changed position."""
    if adv.length != doc.length:
        raise ValueError(f"length mismatch: {doc.length} vs {adv.length}")
    return tuple(
        (i, a, b) for i, (a, b) in enumerate(zip(doc.tokens, adv.tokens)) if a != b
    )


def sd_size(doc: Document, delta: float, lexicon: Lexicon) -> int:
    """Number of admissible substituted documents, the identity included.

    Computed without enumeration: with ``a_i`` the number of strict synonym
    alternatives at position ``i``, the count is the sum over ``r <= E`` of
    the elementary symmetric polynomials ``e_r(a_1, ..., a_M)``.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    e = math.floor(delta * doc.length)
    counts = [1] + [0] * e
    for w in doc.tokens:
        a = len(lexicon.attack_set(w)) - 1
        if a == 0:
            continue
        for r in range(min(e, doc.length), 0, -1):
            counts[r] += counts[r - 1] * a
    return sum(counts)


def enumerate_sd(
    doc: Document, delta: float, lexicon: Lexicon, cap: int = DEFAULT_SD_CAP
) -> Iterator[Document]:
    """Yield every admissible substituted document exactly once, the original
    document first, in a deterministic order."""
    total = sd_size(doc, delta, lexicon)
    if total > cap:
        raise ValueError(
            f"substitution set of {doc.id!r} has {total} members, above the cap of {cap}"
        )
    e = math.floor(delta * doc.length)
    options = {
        i: [t for t in lexicon.attack_set(w) if t != w]
        for i, w in enumerate(doc.tokens)
    }
    positions = [i for i, opts in options.items() if opts]

    yield doc
    for r in range(1, min(e, len(positions)) + 1):
        for combo in itertools.combinations(positions, r):
            for picks in itertools.product(*(options[i] for i in combo)):
                tokens = list(doc.tokens)
                for i, tok in zip(combo, picks):
                    tokens[i] = tok
                yield doc.with_tokens(tokens)


def rank_after(ranked: RankedList, doc_id: str, score: float) -> int:
    """Rank the attacked document would take in the list, its own original
    entry removed; ties break by doc id ascending as everywhere else."""
    ahead = sum(
        1
        for e in ranked.entries
        if e.doc_id != doc_id
        and (e.score > score or (e.score == score and e.doc_id < doc_id))
    )
    return ahead + 1


def brute_force_attack(
    model: ScoreModel,
    query: Query,
    doc: Document,
    ranked: RankedList,
    delta: float,
    lexicon: Lexicon,
    cap: int = DEFAULT_SD_CAP,
) -> AttackOutcome:
    """Evaluate every admissible substitution and keep the best score.

    This is the ground-truth adversary: whatever it cannot achieve, no
    admissible attack can.
    """
    original_rank = ranked.rank_of(doc.id)
    best_doc = doc
    best_score = model.score(query, doc)
    for cand in enumerate_sd(doc, delta, lexicon, cap):
        s = model.score(query, cand)
        if s > best_score:
            best_score = s
            best_doc = cand
    best_rank = rank_after(ranked, doc.id, best_score)
    return AttackOutcome(
        query_id=query.id,
        doc_id=doc.id,
        original_rank=original_rank,
        best_rank_after=best_rank,
        best_doc=best_doc,
        best_score=best_score,
        success=best_rank < original_rank,
        substitutions=substitutions_between(doc, best_doc),
    )


def greedy_attack(
    model: ScoreModel,
    query: Query,
    doc: Document,
    ranked: RankedList,
    budget: int,
    lexicon: Lexicon,
) -> AttackOutcome:
    """Hill-climb over single (position, synonym) substitutions.

    Each step applies the strictly score-improving move with the largest
    gain, ties broken by (position, lexicographic word), while keeping at
    most ``budget`` positions changed from the original document. Stops when
    no move improves the score.
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    original_rank = ranked.rank_of(doc.id)
    current = list(doc.tokens)
    current_score = model.score(query, doc)

    options = {i: lexicon.attack_set(w) for i, w in enumerate(doc.tokens)}
    while True:
        best_move: tuple[int, str] | None = None
        best_score = current_score
        changed = {i for i, w in enumerate(doc.tokens) if current[i] != w}
        # Moves are scanned in ascending (position, token) order and only a
        # strictly larger score replaces the incumbent, which realizes the
        # tie rule: maximal gain, then smallest position, then smallest word.
        for pos in range(doc.length):
            for tok in options[pos]:
                if tok == current[pos]:
                    continue
                will_change = changed | {pos} if tok != doc.tokens[pos] else changed - {pos}
                if len(will_change) > budget:
                    continue
                trial = current.copy()
                trial[pos] = tok
                s = model.score(query, doc.with_tokens(trial))
                if s > best_score:
                    best_score = s
                    best_move = (pos, tok)
        if best_move is None:
            break
        current[best_move[0]] = best_move[1]
        current_score = best_score

    best_doc = doc.with_tokens(current)
    best_rank = rank_after(ranked, doc.id, current_score)
    return AttackOutcome(
        query_id=query.id,
        doc_id=doc.id,
        original_rank=original_rank,
        best_rank_after=best_rank,
        best_doc=best_doc,
        best_score=current_score,
        success=best_rank < original_rank,
        substitutions=substitutions_between(doc, best_doc),
    )
