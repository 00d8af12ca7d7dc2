"""Agglomerative trees: build, cut, and read cophenetic distances.

Merge rows follow the usual ``(a, b, height, size)`` convention: leaves are
``0..n-1`` and the cluster formed at step ``i`` gets id ``n + i``.
"""

import numpy as np

from . import kernels
from .errors import ParameterError

METHODS = {"average": kernels.AVERAGE, "ward": kernels.WARD}


def linkage(dist, method="average"):
    """Lance-Williams agglomeration of a square dissimilarity matrix.

    For ``ward`` pass *squared* Euclidean distances; heights are then the
    Lance-Williams merge costs on that scale.  Ties go to the lowest pair of
    slot indices.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown linkage {method!r}")
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ParameterError("dissimilarity must be a square matrix")
    if dist.shape[0] < 2:
        return np.empty((0, 4))
    return kernels.agglomerate(dist, METHODS[method])


def cophenetic_distances(merges, n):
    """n x n matrix of the height at which each pair first shares a cluster."""
    coph = np.zeros((n, n))
    members = {i: [i] for i in range(n)}
    for step, (a, b, height, _) in enumerate(merges):
        left = members.pop(int(a))
        right = members.pop(int(b))
        coph[np.ix_(left, right)] = height
        coph[np.ix_(right, left)] = height
        members[n + step] = left + right
    return coph


def cut_tree(merges, n, k):
    """Labels after applying the first ``n - k`` merges.

    Labels are numbered 0.. in order of each cluster's first day.
    """
    if not 1 <= k <= n:
        raise ParameterError(f"cluster count k={k} outside [1, {n}]")
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rep = list(range(n))  # cluster id -> some leaf
    for step in range(n - k):
        a, b = int(merges[step, 0]), int(merges[step, 1])
        ra, rb = find(rep[a]), find(rep[b])
        parent[max(ra, rb)] = min(ra, rb)
        rep.append(min(ra, rb))
    roots = [find(i) for i in range(n)]
    relabel = {}
    labels = np.empty(n, dtype=np.int64)
    for i, r in enumerate(roots):
        labels[i] = relabel.setdefault(r, len(relabel))
    return labels


def pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ac = a - a.mean()
    bc = b - b.mean()
    sab = float(np.dot(ac, bc))
    saa = float(np.dot(ac, ac))
    sbb = float(np.dot(bc, bc))
    if saa == 0.0 or sbb == 0.0:
        return np.nan
    # sqrt of the product keeps corr(a, a) exactly 1
    return max(-1.0, min(1.0, sab / np.sqrt(saa * sbb)))
