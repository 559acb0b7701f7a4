"""Evaluation metrics over certification reports and attack outcomes.

* ``crq``: percentage of queries whose ranked list is certified.
* ``sr``: percentage of attacked documents whose rank improved.
* ``cond_sr``: mean per-query improved fraction, restricted to certified
  queries; undefined (None) when nothing is certified.
* ``mrr``: mean reciprocal rank of the first relevant document at a cutoff.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .attack import AttackOutcome
from .certify import CertificateReport
from .corpus import RankedList

logger = logging.getLogger(__name__)


def crq(reports: Sequence[CertificateReport]) -> float:
    """Certified percentage: ``100 * certified / |queries|``."""
    if not reports:
        raise ValueError("no certification reports given")
    return 100.0 * sum(1 for r in reports if r.certified) / len(reports)


def sr(outcomes: Sequence[AttackOutcome]) -> float:
    """Attack success percentage over all attacked documents."""
    if not outcomes:
        raise ValueError("no attack outcomes given")
    return 100.0 * sum(1 for o in outcomes if o.success) / len(outcomes)


def cond_sr(
    reports: Sequence[CertificateReport], outcomes: Sequence[AttackOutcome]
) -> float | None:
    """Average, over certified queries, of the per-query fraction of attacked
    documents whose rank improved; ``None`` when no query is certified (or no
    certified query has attack outcomes)."""
    by_query: dict[str, list[AttackOutcome]] = {}
    for o in outcomes:
        by_query.setdefault(o.query_id, []).append(o)

    fractions: list[float] = []
    for report in reports:
        if not report.certified:
            continue
        outs = by_query.get(report.query_id)
        if not outs:
            continue
        fractions.append(sum(1 for o in outs if o.success) / len(outs))
    if not fractions:
        return None
    # fsum is exactly rounded, so the result is independent of input order.
    return 100.0 * math.fsum(fractions) / len(fractions)


def mrr(
    run: Mapping[str, RankedList],
    qrels: Mapping[str, frozenset[str] | set[str]],
    cutoff: int,
) -> float:
    """Mean reciprocal rank of the first relevant document within ``cutoff``.

    Queries absent from the qrels are skipped with a warning; queries whose
    top ``cutoff`` contains no relevant document contribute 0.
    """
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    if not run:
        raise ValueError("no ranked lists given")
    total = 0.0
    counted = 0
    for qid in sorted(run):
        if qid not in qrels:
            logger.warning("query %s missing from qrels; skipped", qid)
            continue
        relevant = qrels[qid]
        counted += 1
        for pos, entry in enumerate(run[qid].entries[:cutoff], start=1):
            if entry.doc_id in relevant:
                total += 1.0 / pos
                break
    if counted == 0:
        raise ValueError("no query overlaps between run and qrels")
    return total / counted


@dataclass(frozen=True)
class EvalSummary:
    """All evaluation numbers for one pipeline run."""

    crq: float | None
    sr: float | None
    cond_sr: float | None
    mrr_at: Mapping[int, float] = field(default_factory=dict)
    n_queries: int = 0
    n_attacked: int = 0

    def to_json_dict(self) -> dict:
        return {
            "crq": self.crq,
            "sr": self.sr,
            "cond_sr": "undefined" if self.cond_sr is None else self.cond_sr,
            "mrr_at": {str(k): v for k, v in sorted(self.mrr_at.items())},
            "n_queries": self.n_queries,
            "n_attacked": self.n_attacked,
        }


def summarize(
    reports: Sequence[CertificateReport],
    outcomes: Sequence[AttackOutcome],
    run: Mapping[str, RankedList] | None = None,
    qrels: Mapping[str, frozenset[str] | set[str]] | None = None,
    cutoffs: Iterable[int] = (10, 100),
) -> EvalSummary:
    mrr_at: dict[int, float] = {}
    if run is not None and qrels is not None:
        for cutoff in cutoffs:
            mrr_at[cutoff] = mrr(run, qrels, cutoff)
    return EvalSummary(
        crq=crq(reports) if reports else None,
        sr=sr(outcomes) if outcomes else None,
        cond_sr=cond_sr(reports, outcomes),
        mrr_at=mrr_at,
        n_queries=len(reports),
        n_attacked=len(outcomes),
    )


def format_summary_table(summary: EvalSummary) -> str:
    def fmt(value: float | None) -> str:
        return "undefined" if value is None else f"{value:.2f}"

    lines = [
        "metric      value",
        "----------  ---------",
        f"CRQ (%)     {fmt(summary.crq)}",
        f"SR (%)      {fmt(summary.sr)}",
        f"CondSR (%)  {fmt(summary.cond_sr)}",
    ]
    for cutoff, value in sorted(summary.mrr_at.items()):
        lines.append(f"MRR@{cutoff:<7d} {value:.4f}")
    lines.append(f"queries     {summary.n_queries}")
    lines.append(f"attacked    {summary.n_attacked}")
    return "\n".join(lines)
