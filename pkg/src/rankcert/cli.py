"""Command-line pipeline: build-lexicon, train, smooth-rank, certify, attack,
evaluate.

Every subcommand is deterministic given its seed and inputs, and echoes its
hyperparameters into a ``<out>.meta.json`` sidecar for provenance. Exit
codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import click

from . import attack as attack_mod
from . import certify as certify_mod
from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import training as train_mod
from .corpus import Document, Query, RankedList
from .lexicon import EmbeddingTable, Lexicon
from .rankers import Bm25Model, LinearEmbedScorer, ScoreModel
from .smoothing import SmoothedModel, hoeffding_radius, smooth_rank

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Echoed into output sidecars so every artifact records its inputs."""

    subcommand: str
    paths: Mapping[str, str] = field(default_factory=dict)
    params: Mapping[str, object] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {"subcommand": self.subcommand, "paths": dict(self.paths), "params": dict(self.params)}


def _write_meta(out: Path, cfg: RunConfig, extra: Mapping[str, object] | None = None) -> None:
    payload = cfg.to_json_dict()
    if extra:
        payload.update(extra)
    meta_path = out.with_name(out.name + ".meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_model(
    model_path: Path,
    corpus: Mapping[str, Document],
    embeddings: EmbeddingTable | None,
    queries: Mapping[str, Query],
    run: Mapping[str, RankedList],
) -> ScoreModel:
    with open(model_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    kind = payload.get("type")
    if kind == "linear":
        if embeddings is None:
            raise click.ClickException("--embeddings is required for a linear scorer model")
        return LinearEmbedScorer.from_json_dict(payload, embeddings)
    if kind == "bm25":
        model = _bm25_from_payload(payload, corpus)
        pairs = [
            (queries[qid], corpus[e.doc_id])
            for qid, ranked in sorted(run.items())
            if qid in queries
            for e in ranked.entries
            if e.doc_id in corpus
        ]
        if not pairs:
            raise click.ClickException("cannot calibrate BM25: no (query, document) pairs resolve")
        return model.calibrated(pairs)
    raise click.ClickException(f"unknown model type {kind!r} in {model_path}")


def _bm25_from_payload(payload: Mapping, corpus: Mapping[str, Document]) -> Bm25Model:
    k1 = float(payload.get("k1", 0.9))
    b = float(payload.get("b", 0.4))
    cache_path = payload.get("cache")
    fingerprint = corpus_mod.corpus_fingerprint(corpus)
    if cache_path:
        cache = Path(cache_path)
        if cache.exists():
            with open(cache, encoding="utf-8") as fh:
                cached = json.load(fh)
            try:
                return Bm25Model.from_cache_dict(cached, fingerprint)
            except ValueError:
                logger.warning("BM25 cache %s is stale; rebuilding", cache)
    model = Bm25Model.from_corpus(corpus, k1=k1, b=b)
    if cache_path:
        with open(cache_path, "w", encoding="utf-8") as fh:
            json.dump(model.to_cache_dict(fingerprint), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return model


def _candidates(
    ranked: RankedList, corpus: Mapping[str, Document]
) -> list[Document]:
    missing = [e.doc_id for e in ranked.entries if e.doc_id not in corpus]
    if missing:
        raise KeyError(f"documents missing from corpus: {missing}")
    return [corpus[e.doc_id] for e in ranked.entries]


def _fail(exc: Exception) -> click.ClickException:
    return click.ClickException(str(exc))


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Certify and attack the top-K robustness of text ranking models."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command("build-lexicon")
@click.option("--embeddings", "embeddings_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tau", default=0.8, show_default=True, type=float, help="Cosine threshold for synonymy.")
@click.option("--j", default=4, show_default=True, type=int, help="Perturbation set size.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_build_lexicon(embeddings_path: str, tau: float, j: int, out_path: str) -> None:
    """Build the synonym/perturbation lexicon from an embedding file."""
    try:
        emb = EmbeddingTable.load(embeddings_path)
        lexicon = Lexicon.build(emb, tau=tau, j=j)
        problems = lexicon.validate()
        if problems:
            for p in problems:
                click.echo(f"violation: {p}", err=True)
            raise click.ClickException(f"lexicon fails validation with {len(problems)} violation(s)")
        out = Path(out_path)
        lexicon.save(out)
        _write_meta(out, RunConfig(
            subcommand="build-lexicon",
            paths={"embeddings": embeddings_path, "out": out_path},
            params={"tau": tau, "j": j},
        ), extra={"vocab": len(lexicon.vocab)})
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(exc)
    click.echo(f"lexicon with {len(lexicon.vocab)} words written to {out_path}")


@main.command("train")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--triples", "triples_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings", "embeddings_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--lexicon", "lexicon_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--init-model", "init_model_path", type=click.Path(exists=True, dir_okay=False), help="Starting parameters (used with --warm-start).")
@click.option("--epochs", default=20, show_default=True, type=int)
@click.option("--lr", default=0.5, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--no-noise", is_flag=True, help="Train on clean documents instead of perturbed ones.")
@click.option("--static-noise", is_flag=True, help="Freeze one perturbed copy per document instead of resampling.")
@click.option("--warm-start/--cold-start", default=False, show_default=True, help="Start from --init-model parameters or from zeros.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--loss-trace", "trace_path", type=click.Path(dir_okay=False), help="Optional CSV of per-epoch loss.")
def cmd_train(
    corpus_path: str, queries_path: str, triples_path: str, embeddings_path: str,
    lexicon_path: str, init_model_path: str | None, epochs: int, lr: float, seed: int,
    no_noise: bool, static_noise: bool, warm_start: bool, out_path: str, trace_path: str | None,
) -> None:
    """Train the linear embedding scorer with noise data augmentation."""
    try:
        corpus = corpus_mod.load_corpus(corpus_path)
        queries = corpus_mod.load_queries(queries_path)
        triples = train_mod.load_triples(triples_path)
        emb = EmbeddingTable.load(embeddings_path)
        lexicon = Lexicon.load(lexicon_path)
        if init_model_path:
            with open(init_model_path, encoding="utf-8") as fh:
                model = LinearEmbedScorer.from_json_dict(json.load(fh), emb)
        else:
            model = LinearEmbedScorer.initial(emb)
        cfg = train_mod.TrainConfig(
            epochs=epochs, learning_rate=lr, seed=seed,
            noise_enabled=not no_noise, static_noise=static_noise, warm_start=warm_start,
        )
        result = train_mod.train(model, triples, corpus, queries, lexicon, cfg)
        out = Path(out_path)
        result.model.save(out)
        if trace_path:
            train_mod.write_loss_trace(result.losses, trace_path)
        _write_meta(out, RunConfig(
            subcommand="train",
            paths={"corpus": corpus_path, "queries": queries_path, "triples": triples_path,
                   "embeddings": embeddings_path, "lexicon": lexicon_path, "out": out_path},
            params={"epochs": epochs, "lr": lr, "seed": seed, "noise": not no_noise,
                    "static_noise": static_noise, "warm_start": warm_start},
        ), extra={"final_loss": result.losses[-1]})
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(exc)
    click.echo(f"trained model written to {out_path} (final loss {result.losses[-1]:.4f})")


_shared_scoring_options = [
    click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--queries", "queries_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--run", "run_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--lexicon", "lexicon_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--embeddings", "embeddings_path", type=click.Path(exists=True, dir_okay=False), help="Required for linear scorer models."),
    click.option("--n-samples", default=1000, show_default=True, type=int),
    click.option("--alpha", default=0.05, show_default=True, type=float),
    click.option("--seed", default=0, show_default=True, type=int),
]


def _with_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


def _load_scoring_inputs(corpus_path, queries_path, run_path, lexicon_path, model_path, embeddings_path):
    corpus = corpus_mod.load_corpus(corpus_path)
    queries = corpus_mod.load_queries(queries_path)
    run = corpus_mod.load_run(run_path)
    lexicon = Lexicon.load(lexicon_path)
    emb = EmbeddingTable.load(embeddings_path) if embeddings_path else None
    model = _load_model(Path(model_path), corpus, emb, queries, run)
    return corpus, queries, run, lexicon, model


@main.command("smooth-rank")
@_with_options(_shared_scoring_options)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--jobs", default=1, show_default=True, type=int)
def cmd_smooth_rank(
    corpus_path, queries_path, run_path, lexicon_path, model_path, embeddings_path,
    n_samples, alpha, seed, out_path, jobs,
) -> None:
    """Re-rank every query's candidates by Monte Carlo smoothed score."""
    try:
        corpus, queries, run, lexicon, model = _load_scoring_inputs(
            corpus_path, queries_path, run_path, lexicon_path, model_path, embeddings_path)

        def work(qid: str) -> RankedList:
            return smooth_rank(model, queries[qid], _candidates(run[qid], corpus),
                               lexicon, n=n_samples, alpha=alpha, root_seed=seed)

        qids = sorted(q for q in run if q in queries)
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            results = dict(zip(qids, pool.map(work, qids)))
        out = Path(out_path)
        corpus_mod.write_run(results, out, tag="smoothed")
        _write_meta(out, RunConfig(
            subcommand="smooth-rank",
            paths={"corpus": corpus_path, "queries": queries_path, "run": run_path,
                   "lexicon": lexicon_path, "model": model_path, "out": out_path},
            params={"n_samples": n_samples, "alpha": alpha, "seed": seed, "jobs": jobs},
        ))
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(exc)
    click.echo(f"smoothed run for {len(results)} queries written to {out_path}")


@main.command("certify")
@_with_options(_shared_scoring_options)
@click.option("--k", default=10, show_default=True, type=int)
@click.option("--delta", default=1.0, show_default=True, type=float)
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_certify(
    corpus_path, queries_path, run_path, lexicon_path, model_path, embeddings_path,
    n_samples, alpha, seed, k, delta, jobs, out_path,
) -> None:
    """Certify top-K robustness per query; writes report JSONL, prints CRQ."""
    try:
        corpus, queries, run, lexicon, model = _load_scoring_inputs(
            corpus_path, queries_path, run_path, lexicon_path, model_path, embeddings_path)

        skipped: dict[str, str] = {}

        def work(qid: str) -> certify_mod.CertificateReport | None:
            if qid not in queries:
                skipped[qid] = "query text missing"
                return None
            ranked = run[qid]
            if k >= len(ranked):
                skipped[qid] = f"K = {k} >= list length {len(ranked)}"
                return None
            try:
                candidates = _candidates(ranked, corpus)
                smoothed = smooth_rank(model, queries[qid], candidates, lexicon,
                                       n=n_samples, alpha=alpha, root_seed=seed)
                return certify_mod.certify_topk(
                    model, queries[qid], smoothed, corpus, k, delta, lexicon,
                    n=n_samples, alpha=alpha, root_seed=seed)
            except Exception as exc:  # per-query failure: record, keep going
                skipped[qid] = str(exc)
                return None

        qids = sorted(run)
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            results = dict(zip(qids, pool.map(work, qids)))

        reports = [results[qid] for qid in qids if results[qid] is not None]
        if not reports and skipped:
            raise click.ClickException(
                "no query could be certified: " + "; ".join(f"{q}: {r}" for q, r in sorted(skipped.items())))
        out = Path(out_path)
        with open(out, "w", encoding="utf-8") as fh:
            for report in reports:
                fh.write(json.dumps(report.to_json_dict(), sort_keys=True) + "\n")
        _write_meta(out, RunConfig(
            subcommand="certify",
            paths={"corpus": corpus_path, "queries": queries_path, "run": run_path,
                   "lexicon": lexicon_path, "model": model_path, "out": out_path},
            params={"k": k, "delta": delta, "n_samples": n_samples, "alpha": alpha,
                    "seed": seed, "jobs": jobs},
        ), extra={"skipped": dict(sorted(skipped.items()))})
        for qid, reason in sorted(skipped.items()):
            click.echo(f"skipped {qid}: {reason}", err=True)
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(exc)
    value = metrics_mod.crq(reports)
    click.echo(f"radius per estimate: {hoeffding_radius(n_samples, alpha):.6f}")
    click.echo(f"CRQ: {value:.2f}% ({sum(1 for r in reports if r.certified)}/{len(reports)} queries)")


@main.command("attack")
@_with_options(_shared_scoring_options)
@click.option("--k", default=10, show_default=True, type=int)
@click.option("--delta", default=1.0, show_default=True, type=float)
@click.option("--budget", default=3, show_default=True, type=int, help="Greedy substitution budget.")
@click.option("--target", type=click.Choice(["smoothed", "base"]), default="smoothed", show_default=True)
@click.option("--max-attacked", default=None, type=int, help="Attack at most this many tail documents per query.")
@click.option("--jobs", default=1, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_attack(
    corpus_path, queries_path, run_path, lexicon_path, model_path, embeddings_path,
    n_samples, alpha, seed, k, delta, budget, target, max_attacked, jobs, out_path,
) -> None:
    """Greedy synonym-substitution attack on documents beyond rank K."""
    try:
        if budget < 1:
            raise click.BadParameter("budget must be >= 1", param_hint="--budget")
        corpus, queries, run, lexicon, model = _load_scoring_inputs(
            corpus_path, queries_path, run_path, lexicon_path, model_path, embeddings_path)

        def work(qid: str) -> list[attack_mod.AttackOutcome]:
            query = queries[qid]
            candidates = _candidates(run[qid], corpus)
            if target == "smoothed":
                scorer: ScoreModel = SmoothedModel(model, lexicon, n=n_samples, alpha=alpha, root_seed=seed)
                ranked = smooth_rank(model, query, candidates, lexicon,
                                     n=n_samples, alpha=alpha, root_seed=seed)
            else:
                scorer = model
                ranked = corpus_mod.make_ranked(qid, [(d.id, model.score(query, d)) for d in candidates])
            targets = [e.doc_id for e in ranked.tail(k)]
            if max_attacked is not None:
                targets = targets[:max_attacked]
            return [
                attack_mod.greedy_attack(scorer, query, corpus[doc_id], ranked, budget, lexicon)
                for doc_id in targets
            ]

        qids = sorted(q for q in run if q in queries and k < len(run[q]))
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            results = dict(zip(qids, pool.map(work, qids)))

        out = Path(out_path)
        outcomes = [o for qid in qids for o in results[qid]]
        with open(out, "w", encoding="utf-8") as fh:
            for o in outcomes:
                fh.write(json.dumps(o.to_json_dict(), sort_keys=True) + "\n")
        _write_meta(out, RunConfig(
            subcommand="attack",
            paths={"corpus": corpus_path, "queries": queries_path, "run": run_path,
                   "lexicon": lexicon_path, "model": model_path, "out": out_path},
            params={"k": k, "delta": delta, "budget": budget, "target": target,
                    "max_attacked": max_attacked, "n_samples": n_samples,
                    "alpha": alpha, "seed": seed, "jobs": jobs},
        ))
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(exc)
    if outcomes:
        click.echo(f"SR: {metrics_mod.sr(outcomes):.2f}% over {len(outcomes)} attacked documents")
    else:
        click.echo("no documents attacked")


@main.command("evaluate")
@click.option("--reports", "reports_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--outcomes", "outcomes_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--run", "run_path", type=click.Path(exists=True, dir_okay=False), help="Run file for MRR.")
@click.option("--qrels", "qrels_path", type=click.Path(exists=True, dir_okay=False), help="Qrels for MRR.")
@click.option("--cutoff", "cutoffs", multiple=True, type=int, default=(10, 100), show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_evaluate(reports_path, outcomes_path, run_path, qrels_path, cutoffs, out_path) -> None:
    """Aggregate CRQ / SR / CondSR (and MRR when run + qrels are given)."""
    try:
        reports = []
        with open(reports_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    reports.append(certify_mod.CertificateReport.from_json_dict(json.loads(line)))
        outcomes = []
        with open(outcomes_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    outcomes.append(attack_mod.AttackOutcome.from_json_dict(json.loads(line)))

        report_qids = {r.query_id for r in reports}
        outcome_qids = {o.query_id for o in outcomes}
        unmatched = sorted(outcome_qids - report_qids)
        if unmatched:
            raise click.ClickException(
                f"attack outcomes reference queries with no certification report: {unmatched}")

        run = corpus_mod.load_run(run_path) if run_path else None
        qrels = corpus_mod.load_qrels(qrels_path) if qrels_path else None
        summary = metrics_mod.summarize(reports, outcomes, run, qrels, cutoffs=cutoffs)
        out = Path(out_path)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(summary.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_meta(out, RunConfig(
            subcommand="evaluate",
            paths={"reports": reports_path, "outcomes": outcomes_path,
                   "run": run_path or "", "qrels": qrels_path or "", "out": out_path},
            params={"cutoffs": list(cutoffs)},
        ))
    except click.ClickException:
        raise
    except Exception as exc:
        raise _fail(exc)
    click.echo(metrics_mod.format_summary_table(summary))


if __name__ == "__main__":
    main()
