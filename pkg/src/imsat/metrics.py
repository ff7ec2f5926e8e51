"""Clustering accuracy, Hamming retrieval metrics and cross-dataset selection."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, ShapeError


@dataclass
class CodeBook:
    """Discrete outputs for a set of points.

    For clustering ``assignments`` holds cluster ids and ``bits`` is None.
    For hashing ``bits`` is the (n, D) 0/1 matrix and ``assignments`` the
    packed integer codes, most significant bit first.
    """

    assignments: np.ndarray
    soft_probs: object = None
    bits: np.ndarray = None
    task: str = "cluster"

    @property
    def n(self):
        return len(self.assignments)

    def hex_codes(self):
        width = (self.bits.shape[1] + 3) // 4
        return [format(int(c), f"0{width}x") for c in self.assignments]


def pack_bits(bits):
    bits = np.asarray(bits, dtype=np.int64)
    weights = 1 << np.arange(bits.shape[1] - 1, -1, -1, dtype=object)
    return np.array([int(np.dot(row.astype(object), weights)) for row in bits], dtype=object)


def unpack_codes(codes, n_bits):
    out = np.zeros((len(codes), n_bits), dtype=np.uint8)
    for i, c in enumerate(codes):
        c = int(c)
        for b in range(n_bits):
            out[i, n_bits - 1 - b] = (c >> b) & 1
    return out


def _as_ids(x):
    if isinstance(x, CodeBook):
        return np.asarray(x.assignments, dtype=np.int64)
    return np.asarray(x, dtype=np.int64).ravel()


def contingency(clusters, labels):
    k = max(clusters.max(), labels.max()) + 1
    table = np.zeros((k, k), dtype=np.int64)
    np.add.at(table, (clusters, labels), 1)
    return table


def clustering_accuracy(codes, labels):
    """Best one-to-one cluster->label accuracy and the mapping achieving it."""
    c = _as_ids(codes)
    l = _as_ids(labels)
    if c.shape != l.shape:
        raise ShapeError(f"{len(c)} assignments vs {len(l)} labels")
    if c.size == 0:
        raise ShapeError("empty assignment")
    table = contingency(c, l)
    rows, cols = linear_sum_assignment(table.max() - table)
    hits = table[rows, cols].sum()
    present = set(np.unique(c).tolist())
    mapping = {int(r): int(k) for r, k in zip(rows, cols) if r in present}
    return float(hits) / c.size, mapping


def cluster_purity(codes, labels):
    """Fraction of points carrying the majority label of their cluster."""
    c = _as_ids(codes)
    l = _as_ids(labels)
    if c.shape != l.shape or c.size == 0:
        raise ShapeError("purity needs equally long, non-empty assignments and labels")
    table = contingency(c, l)
    return float(table.max(axis=1).sum()) / c.size


def hamming_distance(a, b):
    return (int(a) ^ int(b)).bit_count()


def _bit_matrix(codes, n_bits=None):
    if isinstance(codes, CodeBook):
        if codes.bits is None:
            raise ConfigError("code book holds cluster ids, not hash codes")
        return np.asarray(codes.bits, dtype=np.int64)
    arr = np.asarray(codes)
    if arr.ndim == 2:
        return arr.astype(np.int64)
    if n_bits is None:
        n_bits = max(1, max(int(c).bit_length() for c in arr))
    return unpack_codes(arr, n_bits).astype(np.int64)


def hamming_matrix(query_bits, gallery_bits):
    q = np.asarray(query_bits, dtype=np.int64)
    g = np.asarray(gallery_bits, dtype=np.int64)
    if q.shape[1] != g.shape[1]:
        raise ShapeError("query and gallery codes differ in length")
    same = q @ g.T + (1 - q) @ (1 - g).T
    return q.shape[1] - same


def _ranked_relevance(query_codes, query_labels, gallery_codes, gallery_labels):
    qb = _bit_matrix(query_codes)
    gb = _bit_matrix(gallery_codes, qb.shape[1])
    ql = _as_ids(query_labels)
    gl = _as_ids(gallery_labels)
    if len(qb) == 0 or len(gb) == 0:
        raise ConfigError("query and gallery must be non-empty")
    if len(qb) != len(ql) or len(gb) != len(gl):
        raise ShapeError("codes and labels differ in length")
    dist = hamming_matrix(qb, gb)
    # stable sort: ties keep ascending gallery index
    order = np.argsort(dist, axis=1, kind="stable")
    relevant = gl[order] == ql[:, None]
    return dist, order, relevant


def average_precision(relevant_ranked):
    rel = np.asarray(relevant_ranked, dtype=bool)
    if not rel.any():
        return None
    hits = np.cumsum(rel)
    ranks = np.flatnonzero(rel) + 1
    return float(np.mean(hits[rel] / ranks))


def mean_average_precision(query_codes, query_labels, gallery_codes, gallery_labels):
    """Hamming-ranking mAP; queries without any relevant gallery item are skipped."""
    _, _, relevant = _ranked_relevance(query_codes, query_labels, gallery_codes, gallery_labels)
    aps = [average_precision(r) for r in relevant]
    skipped = sum(ap is None for ap in aps)
    if skipped:
        warnings.warn(f"{skipped} queries have no relevant gallery item and were excluded from mAP")
    aps = [ap for ap in aps if ap is not None]
    return float(np.mean(aps)) if aps else 0.0


def precision_at_n(query_codes, query_labels, gallery_codes, gallery_labels, n=500):
    _, _, relevant = _ranked_relevance(query_codes, query_labels, gallery_codes, gallery_labels)
    if n < 1 or relevant.shape[1] < n:
        raise ConfigError(f"precision@{n} needs at least {n} gallery items, have {relevant.shape[1]}")
    return float(np.mean(relevant[:, :n].sum(axis=1) / n))


def precision_at_radius(query_codes, query_labels, gallery_codes, gallery_labels, r=2,
                        return_empty=False):
    """Mean precision of Hamming look-up within radius ``r``.

    Queries that retrieve nothing count as precision 0. With
    ``return_empty=True`` the number of such queries is returned as well.
    """
    if r < 0:
        raise ConfigError("radius must be non-negative")
    dist, order, relevant = _ranked_relevance(query_codes, query_labels, gallery_codes, gallery_labels)
    inside = np.take_along_axis(dist, order, axis=1) <= r
    retrieved = inside.sum(axis=1)
    hits = (inside & relevant).sum(axis=1)
    prec = np.where(retrieved > 0, hits / np.maximum(retrieved, 1), 0.0)
    empty = int(np.sum(retrieved == 0))
    value = float(prec.mean())
    return (value, empty) if return_empty else value


def stratified_queries(labels, per_class, seed=0):
    """Split indices into (queries, gallery) with ``per_class`` queries per label."""
    labels = _as_ids(labels)
    rng = np.random.default_rng(seed)
    picks = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) <= per_class:
            raise ConfigError(f"class {c} has {len(idx)} points; cannot take {per_class} queries and keep a gallery")
        picks.append(rng.choice(idx, size=per_class, replace=False))
    query = np.sort(np.concatenate(picks))
    gallery = np.setdiff1d(np.arange(len(labels)), query)
    return query, gallery


def select_shared_hyperparameter(acc_grid):
    """Candidate maximizing the sum over datasets of ACC / (best ACC on that dataset).

    ``acc_grid`` is (datasets, candidates). Ties go to the smallest index.
    """
    grid = np.asarray(acc_grid, dtype=np.float64)
    if grid.ndim != 2 or grid.size == 0:
        raise ConfigError("acc_grid must be a non-empty (datasets, candidates) matrix")
    if np.any((grid < 0) | (grid > 1)):
        raise ConfigError("accuracies must lie in [0, 1]")
    best = grid.max(axis=1)
    if np.any(best <= 0):
        raise ConfigError("every dataset needs a positive best accuracy")
    scores = (grid / best[:, None]).sum(axis=0)
    return int(np.argmax(scores))
