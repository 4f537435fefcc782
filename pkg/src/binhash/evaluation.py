"""Retrieval-quality metrics over Hamming rankings.

A database item is relevant to a query when the judge says so; the default
judge is shared-label overlap, the same rule used to build training pairs.
Per-query average precision is truncated at k and divided by the number of
relevant items *retrieved* in the top k (queries that retrieve nothing score
0); a ``min(R, k)`` denominator is available as a switch. When a query id also
appears in the database, that entry is excluded from the query's own ranking.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .codes import BinaryCode
from .errors import UndefinedRecallError
from .retrieval import CodeIndex, radius_query, rank

AP_DENOMINATORS = ("retrieved", "min_k_relevant")


def shared_label_judge(labels_a, labels_b) -> bool:
    """Default relevance rule: the two label sets overlap."""
    return bool(frozenset(labels_a) & frozenset(labels_b))


def _require_labels(index: CodeIndex, role: str) -> None:
    if index.labels is None:
        raise ValueError(f"{role} index has no labels; metrics need a labels manifest")


def _ranked_relevance(
    query_code: BinaryCode, query_labels, index: CodeIndex, judge, exclude_id=None
) -> np.ndarray:
    result = rank(index, query_code, top_n=len(index))
    rel = []
    for pos, qid in zip(result.positions.tolist(), result.ids.tolist()):
        if exclude_id is not None and qid == exclude_id:
            continue
        rel.append(1 if judge(query_labels, index.labels[pos]) else 0)
    return np.asarray(rel, dtype=np.int64)


def average_precision(ranked_relevance, k: int, denominator: str = "retrieved") -> float:
    """AP@k of a 0/1 relevance list in rank order."""
    rel = np.asarray(ranked_relevance, dtype=np.int64)
    if rel.ndim != 1 or rel.size < 1:
        raise ValueError("ranked_relevance must be a non-empty 1-D 0/1 list")
    if k < 1:
        raise ValueError("k must be at least 1")
    if denominator not in AP_DENOMINATORS:
        raise ValueError(f"denominator must be one of {AP_DENOMINATORS}")
    top = rel[:k]
    hits = int(top.sum())
    if hits == 0:
        return 0.0
    ranks = np.flatnonzero(top) + 1
    precisions = np.cumsum(top)[ranks - 1] / ranks
    if denominator == "retrieved":
        denom = hits
    else:
        denom = min(int(rel.sum()), k)
    return float(precisions.sum() / denom)


def per_query_average_precision(
    queries: CodeIndex,
    index: CodeIndex,
    k: int,
    judge=shared_label_judge,
    denominator: str = "retrieved",
) -> np.ndarray:
    if len(queries) < 1:
        raise ValueError("need at least one query")
    _require_labels(queries, "query")
    _require_labels(index, "database")
    out = np.empty(len(queries))
    for q in range(len(queries)):
        rel = _ranked_relevance(
            queries.code(q), queries.labels[q], index, judge, exclude_id=int(queries.ids[q])
        )
        out[q] = average_precision(rel, k, denominator)
    return out


def mean_average_precision(
    queries: CodeIndex,
    index: CodeIndex,
    k: int,
    judge=shared_label_judge,
    denominator: str = "retrieved",
) -> float:
    """Mean AP@k over the query set."""
    return float(per_query_average_precision(queries, index, k, judge, denominator).mean())


def precision_at_hamming2(queries: CodeIndex, index: CodeIndex, judge=shared_label_judge) -> float:
    """Mean fraction of relevant items among results within Hamming radius 2.

    A query that retrieves nothing inside the radius contributes precision 0.
    """
    if len(queries) < 1:
        raise ValueError("need at least one query")
    _require_labels(queries, "query")
    _require_labels(index, "database")
    total = 0.0
    for q in range(len(queries)):
        result = radius_query(index, queries.code(q), 2)
        qid = int(queries.ids[q])
        kept = [p for p, rid in zip(result.positions.tolist(), result.ids.tolist()) if rid != qid]
        if kept:
            hits = sum(1 for p in kept if judge(queries.labels[q], index.labels[p]))
            total += hits / len(kept)
    return total / len(queries)


def precision_recall_curve(
    query_code: BinaryCode, query_labels, index: CodeIndex, judge=shared_label_judge, exclude_id=None
) -> list[tuple[float, float]]:
    """(recall, precision) at every rank cutoff 1..N; recall ends at 1."""
    _require_labels(index, "database")
    rel = _ranked_relevance(query_code, query_labels, index, judge, exclude_id)
    total_relevant = int(rel.sum())
    if total_relevant == 0:
        raise UndefinedRecallError("no relevant item in the database for this query")
    hits = np.cumsum(rel)
    n = np.arange(1, rel.size + 1)
    return list(zip((hits / total_relevant).tolist(), (hits / n).tolist()))


def precision_at_n(
    query_code: BinaryCode,
    query_labels,
    index: CodeIndex,
    n_values,
    judge=shared_label_judge,
    exclude_id=None,
) -> list[tuple[int, float]]:
    """Precision among the top n ranked results, for each requested n."""
    _require_labels(index, "database")
    rel = _ranked_relevance(query_code, query_labels, index, judge, exclude_id)
    out = []
    for n in n_values:
        if not 1 <= n <= rel.size:
            raise ValueError(f"n={n} outside [1, {rel.size}]")
        out.append((int(n), float(rel[:n].mean())))
    return out


def code_histogram(codes, bins: int = 100) -> np.ndarray:
    """Counts of |code| values over `bins` even bins on [0, 1] (last bin right-closed)."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    values = np.abs(np.asarray(codes, dtype=np.float64)).ravel()
    if values.size and values.max() > 1.0 + 1e-12:
        raise ValueError("code magnitudes must lie in [0, 1]")
    counts, _ = np.histogram(np.minimum(values, 1.0), bins=np.linspace(0.0, 1.0, bins + 1))
    return counts.astype(np.int64)


@dataclass(frozen=True)
class MetricReport:
    """Aggregated retrieval metrics for one query set against one database."""

    k: int
    map_at_k: float
    per_query_ap: tuple[float, ...]
    p_at_h2: float | None
    p_at_n: tuple[tuple[int, float], ...]
    pr_curve: tuple[tuple[float, float], ...]
    query_count: int

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "map_at_k": self.map_at_k,
            "per_query_ap": list(self.per_query_ap),
            "p_at_h2": self.p_at_h2,
            "p_at_n": [[n, p] for n, p in self.p_at_n],
            "pr_curve": [[r, p] for r, p in self.pr_curve],
            "query_count": self.query_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


DEFAULT_N_VALUES = (1, 5, 10, 20, 50, 100)


def evaluate(
    queries: CodeIndex,
    index: CodeIndex,
    k: int = 100,
    n_values=None,
    judge=shared_label_judge,
    denominator: str = "retrieved",
    metrics=("map", "ph2", "pn", "pr"),
) -> MetricReport:
    """Compute the selected metrics; PR and P@N are averaged across queries.

    Queries with zero relevant items are skipped in the PR aggregation (their
    recall is undefined) but score 0 in MAP.
    """
    _require_labels(queries, "query")
    _require_labels(index, "database")
    aps: tuple[float, ...] = ()
    map_at_k = math.nan
    if "map" in metrics:
        per_query = per_query_average_precision(queries, index, k, judge, denominator)
        aps = tuple(float(v) for v in per_query)
        map_at_k = float(per_query.mean())
    p_h2 = precision_at_hamming2(queries, index, judge) if "ph2" in metrics else None

    pn_list: tuple[tuple[int, float], ...] = ()
    pr_list: tuple[tuple[float, float], ...] = ()
    if "pn" in metrics or "pr" in metrics:
        rel_lists = []
        for q in range(len(queries)):
            rel = _ranked_relevance(
                queries.code(q), queries.labels[q], index, judge, exclude_id=int(queries.ids[q])
            )
            rel_lists.append(rel)
        min_len = min(r.size for r in rel_lists)
        if "pn" in metrics:
            wanted = n_values if n_values is not None else [n for n in DEFAULT_N_VALUES if n <= min_len]
            sums: dict[int, float] = {int(n): 0.0 for n in wanted}
            for rel in rel_lists:
                for n in sums:
                    if not 1 <= n <= rel.size:
                        raise ValueError(f"n={n} outside [1, {rel.size}]")
                    sums[n] += float(rel[:n].mean())
            pn_list = tuple((n, sums[n] / len(rel_lists)) for n in sorted(sums))
        if "pr" in metrics:
            judged = [r for r in rel_lists if r.sum() > 0]
            if judged:
                recalls = np.zeros(min_len)
                precisions = np.zeros(min_len)
                positions = np.arange(1, min_len + 1)
                for rel in judged:
                    hits = np.cumsum(rel[:min_len])
                    recalls += hits / int(rel.sum())
                    precisions += hits / positions
                pr_list = tuple(
                    zip((recalls / len(judged)).tolist(), (precisions / len(judged)).tolist())
                )
    return MetricReport(
        k=k,
        map_at_k=map_at_k,
        per_query_ap=aps,
        p_at_h2=p_h2,
        p_at_n=pn_list,
        pr_curve=pr_list,
        query_count=len(queries),
    )


def write_pr_csv(path, pr_curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        for recall, precision in pr_curve:
            writer.writerow([repr(float(recall)), repr(float(precision))])


def write_pn_csv(path, p_at_n) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "precision"])
        for n, precision in p_at_n:
            writer.writerow([int(n), repr(float(precision))])


def write_histogram_csv(path, counts) -> None:
    """Emit histogram rows; the square-root transform happens only here."""
    counts = np.asarray(counts, dtype=np.int64)
    edges = np.linspace(0.0, 1.0, counts.size + 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count", "sqrt_count"])
        for k, count in enumerate(counts.tolist()):
            writer.writerow([repr(float(edges[k])), repr(float(edges[k + 1])), count, repr(math.sqrt(count))])
