"""Held-out evaluation against a gold fact set.

Sentence-level scores are aggregated to (entity pair, relation) candidates
by taking the maximum over supporting sentences, candidates are ranked by
score, and the ranking is swept once to produce a precision/recall point per
rank plus precision-at-N cutoffs. Ties and float jitter are tamed by a
deterministic sort key, so equal models give byte-equal reports.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import model as md
from .dataset import NA_LABEL
from .embeddings import encode_corpus
from .errors import DataError


@dataclass(frozen=True)
class RankedPrediction:
    """One (pair, relation) candidate with its best supporting score."""

    pair_key: tuple
    relation_id: int
    score: float
    source_index: int


@dataclass(frozen=True)
class PrecisionAtN:
    """Precision at each requested cutoff; cutoffs past the list length are
    computed over the whole list and flagged as truncated."""

    values: dict
    truncated: frozenset

    @property
    def mean(self):
        return sum(self.values.values()) / len(self.values)


@dataclass(frozen=True)
class EvalReport:
    pr_points: tuple  # (precision, recall, threshold) per rank
    p_at: PrecisionAtN
    gold_count: int
    prediction_count: int


def encode_gold(gold, schema):
    """Gold label-string triples to (e1_id, e2_id, relation_id) triples."""
    out = set()
    for e1, e2, relation in gold:
        if relation == NA_LABEL:
            raise DataError(f"gold fact ({e1}, {e2}) carries the negative label")
        out.add((e1, e2, schema.id_of(relation)))
    return out


def collect_predictions(model, encoded):
    """Max-aggregated positive-relation candidates, best first.

    Every instance contributes a score for each positive relation; per
    (pair, relation) the highest-scoring supporting sentence wins (earliest
    index on exact ties). Sorting is by descending score with the pair key
    and relation id breaking exact score ties.
    """
    if not encoded:
        return []
    probs = md.predict_proba(model, encoded)
    best = {}
    for i, inst in enumerate(encoded):
        for rid in range(1, model.schema.num_relations):
            key = (inst.pair_key, rid)
            score = float(probs[i, rid])
            cur = best.get(key)
            if cur is None or score > cur.score:
                best[key] = RankedPrediction(inst.pair_key, rid, score, i)
    return sorted(best.values(), key=lambda p: (-p.score, p.pair_key, p.relation_id))


def pr_curve(ranked, gold_ids):
    """One (precision, recall, threshold) point per rank of the sweep.

    The threshold column is the score of the prediction admitted at that
    rank: filtering at >= that score reproduces the first k predictions (up
    to exact ties).
    """
    if not gold_ids:
        raise DataError("gold set is empty; precision/recall are undefined")
    points = []
    hits = 0
    for k, pred in enumerate(ranked, start=1):
        if (pred.pair_key[0], pred.pair_key[1], pred.relation_id) in gold_ids:
            hits += 1
        points.append((hits / k, hits / len(gold_ids), pred.score))
    return tuple(points)


def precision_at_n(ranked, gold_ids, ns):
    """Precision over the top N for each cutoff in ``ns``."""
    values = {}
    truncated = set()
    hits_at = []
    hits = 0
    for pred in ranked:
        if (pred.pair_key[0], pred.pair_key[1], pred.relation_id) in gold_ids:
            hits += 1
        hits_at.append(hits)
    for n in ns:
        if n <= 0:
            raise ValueError(f"cutoff must be positive, got {n}")
        if n > len(ranked):
            truncated.add(n)
        k = min(n, len(ranked))
        values[n] = hits_at[k - 1] / k if k else 0.0
    return PrecisionAtN(values=values, truncated=frozenset(truncated))


def evaluate(model, corpus, gold, ns=(100, 200, 300)):
    """Encode a held-out corpus, rank candidates, and score against gold."""
    encoded, _ = encode_corpus(corpus, model.vocab, model.config.embedding, model.schema)
    gold_ids = encode_gold(gold, model.schema)
    ranked = collect_predictions(model, encoded)
    return EvalReport(
        pr_points=pr_curve(ranked, gold_ids),
        p_at=precision_at_n(ranked, gold_ids, ns),
        gold_count=len(gold_ids),
        prediction_count=len(ranked),
    )


def write_pr_csv(report, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("precision,recall,threshold\n")
        for precision, recall, threshold in report.pr_points:
            handle.write(f"{precision!r},{recall!r},{threshold!r}\n")


def write_pan_csv(report, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("N,precision\n")
        for n in sorted(report.p_at.values):
            handle.write(f"{n},{report.p_at.values[n]!r}\n")
