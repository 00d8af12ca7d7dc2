"""Day-to-day structure of pattern activations.

Days are compared by the Euclidean distance between their activation
vectors, grouped with Ward's minimum-variance agglomeration, and the
resulting label sequence is scanned for changes.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ParameterError
from .hierarchy import cut_tree, linkage


@dataclass(frozen=True, eq=False)
class ClusterSummary:
    distance: np.ndarray
    labels: np.ndarray
    merge_tree: np.ndarray  # rows (cluster_a, cluster_b, height, size)
    change_points: list

    @property
    def n_clusters(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0


def activation_distance(h_scaled):
    """T x T Euclidean distances between the columns of a K x T matrix."""
    h = np.ascontiguousarray(h_scaled, dtype=np.float64)
    if h.ndim != 2:
        raise ParameterError("activations must be a K x T matrix")
    return kernels.column_distances(h)


def _check_distance(distance):
    d = np.asarray(distance, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ParameterError("distance must be a square matrix")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ParameterError("distances must be finite and nonnegative")
    if np.any(np.diag(d) != 0):
        raise ParameterError("distance matrix must have a zero diagonal")
    if not np.allclose(d, d.T, rtol=1e-12, atol=0.0):
        raise ParameterError("distance matrix must be symmetric")
    return d


def ward_cluster(distance, k):
    """Ward agglomeration of a Euclidean distance matrix, cut to ``k`` clusters.

    Merge heights are Lance-Williams costs on squared distances, i.e. twice
    the increase in within-cluster sum of squares.
    """
    d = _check_distance(distance)
    t = d.shape[0]
    if int(k) != k or not 1 <= k <= t:
        raise ParameterError(f"k must be an integer in [1, {t}], got {k!r}")
    merges = linkage(d * d, "ward")
    labels = cut_tree(merges, t, int(k))
    return ClusterSummary(distance=d, labels=labels, merge_tree=merges,
                          change_points=transitions(labels))


def transitions(labels):
    """Indices t >= 1 where the label differs from the previous day."""
    labels = np.asarray(labels)
    return [int(i) for i in np.flatnonzero(labels[1:] != labels[:-1]) + 1]


def summarize(h, k, w=None):
    """Cluster days from activations.

    With ``w`` given, activations are first weighted by the pattern norms
    (``scale_normalize``); otherwise ``h`` is used as is.
    """
    if w is not None:
        from .tsnmf import scale_normalize

        _, h = scale_normalize(w, h)
    return ward_cluster(activation_distance(h), k)
