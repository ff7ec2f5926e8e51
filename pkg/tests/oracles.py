"""Independent reference computations used by the tests.

Nothing here calls into the code under test except to evaluate a scalar
loss, so agreement with the library is meaningful.
"""

import itertools
import math

import numpy as np


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences (x is restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def max_rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(floor, np.abs(a) + np.abs(b))))


def brute_force_accuracy(clusters, labels):
    """Best accuracy over every injective cluster -> label mapping."""
    clusters = list(clusters)
    labels = list(labels)
    cs = sorted(set(clusters))
    ls = sorted(set(labels) | set(range(max(len(cs), len(set(labels))))))
    best = 0
    for perm in itertools.permutations(ls, len(cs)):
        m = dict(zip(cs, perm))
        best = max(best, sum(m[c] == l for c, l in zip(clusters, labels)))
    return best / len(labels)


def knn_distance(data, t):
    """Distance from each row to its t-th nearest other row, by full sort."""
    data = np.asarray(data, dtype=np.float64)
    out = []
    for i, row in enumerate(data):
        d = sorted(math.dist(row, other) for j, other in enumerate(data) if j != i)
        out.append(d[t - 1])
    return np.array(out)


def entropy(p):
    return -sum(v * math.log(v) for v in p if v > 0)


def ranking_ap(dist_row, rel_row):
    """Average precision from scratch: stable sort by distance, then precision at each hit."""
    order = sorted(range(len(dist_row)), key=lambda j: (dist_row[j], j))
    hits = 0
    total = 0.0
    for rank, j in enumerate(order, start=1):
        if rel_row[j]:
            hits += 1
            total += hits / rank
    return total / hits if hits else None
