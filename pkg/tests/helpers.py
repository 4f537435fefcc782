"""Independent naive reference implementations used as test oracles.

Everything here works on unpacked {-1,+1} integer lists and pure-python loops
so the oracles share no code path with the package internals they check.
"""

import math

import numpy as np


def naive_inner(a, b) -> int:
    assert len(a) == len(b)
    return int(sum(int(x) * int(y) for x, y in zip(a, b)))


def naive_hamming(a, b) -> int:
    assert len(a) == len(b)
    return int(sum(1 for x, y in zip(a, b) if int(x) != int(y)))


def naive_scan(rows, query):
    return [naive_hamming(row, query) for row in rows]


def naive_rank(rows, query, top_n):
    """[(position, distance)] sorted by (distance, position)."""
    distances = naive_scan(rows, query)
    order = sorted(range(len(rows)), key=lambda p: (distances[p], p))
    return [(p, distances[p]) for p in order[:top_n]]


def naive_radius(rows, query, radius):
    return [(p, d) for p, d in naive_rank(rows, query, len(rows)) if d <= radius]


def naive_ranked_relevance(rows, query, db_labels, query_labels, db_ids=None, exclude_id=None):
    rel = []
    for p, _ in naive_rank(rows, query, len(rows)):
        if exclude_id is not None and db_ids is not None and db_ids[p] == exclude_id:
            continue
        rel.append(1 if set(db_labels[p]) & set(query_labels) else 0)
    return rel


def naive_ap(rel, k) -> float:
    hits = 0
    total = 0.0
    for n, r in enumerate(rel[:k], start=1):
        if r:
            hits += 1
            total += hits / n
    return total / hits if hits else 0.0


def naive_map(db_rows, db_labels, db_ids, q_rows, q_labels, q_ids, k) -> float:
    values = []
    for qi in range(len(q_rows)):
        rel = naive_ranked_relevance(
            db_rows, q_rows[qi], db_labels, q_labels[qi], db_ids, exclude_id=q_ids[qi]
        )
        values.append(naive_ap(rel, k))
    return sum(values) / len(values)


def naive_p_at_h2(db_rows, db_labels, db_ids, q_rows, q_labels, q_ids) -> float:
    total = 0.0
    for qi in range(len(q_rows)):
        kept = [
            (p, d)
            for p, d in naive_radius(db_rows, q_rows[qi], 2)
            if db_ids is None or db_ids[p] != q_ids[qi]
        ]
        if kept:
            hits = sum(1 for p, _ in kept if set(db_labels[p]) & set(q_labels[qi]))
            total += hits / len(kept)
    return total / len(q_rows)


def naive_pr_curve(db_rows, db_labels, db_ids, q_row, q_labels, q_id):
    rel = naive_ranked_relevance(db_rows, q_row, db_labels, q_labels, db_ids, exclude_id=q_id)
    total_relevant = sum(rel)
    assert total_relevant > 0
    points = []
    hits = 0
    for n, r in enumerate(rel, start=1):
        hits += r
        points.append((hits / total_relevant, hits / n))
    return points


def naive_p_at_n(db_rows, db_labels, db_ids, q_row, q_labels, q_id, n_values):
    rel = naive_ranked_relevance(db_rows, q_row, db_labels, q_labels, db_ids, exclude_id=q_id)
    return [(n, sum(rel[:n]) / n) for n in n_values]


def naive_pair_stats(labels):
    """Brute-force similar/dissimilar pair counts from a label-set list."""
    similar = dissimilar = 0
    n = len(labels)
    for i in range(n):
        for j in range(i + 1, n):
            if set(labels[i]) & set(labels[j]):
                similar += 1
            else:
                dissimilar += 1
    return similar + dissimilar, similar, dissimilar


def naive_pair_loss(inner, s, w, alpha) -> float:
    x = alpha * inner
    # stable softplus: log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return w * (max(x, 0.0) + math.log1p(math.exp(-abs(x))) - s * x)


def flatten_params(params) -> np.ndarray:
    return np.concatenate([a.ravel() for a in [*params.weights, *params.biases]])


def write_flat_params(params, flat) -> None:
    offset = 0
    for arrays in (params.weights, params.biases):
        for a in arrays:
            a[...] = flat[offset : offset + a.size].reshape(a.shape)
            offset += a.size
    assert offset == flat.size


def fd_parameter_gradient(loss_of_params, params, step=1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss over all encoder parameters."""
    base = flatten_params(params).copy()
    grad = np.empty_like(base)
    for k in range(base.size):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            probe = base.copy()
            probe[k] += sign * step
            write_flat_params(params, probe)
            value = loss_of_params(params)
            if slot == 0:
                plus = value
            else:
                minus = value
        grad[k] = (plus - minus) / (2.0 * step)
    write_flat_params(params, base)
    return grad
