"""Anchor-view selection and support-to-anchor assignment.

Ties are broken toward the lowest view index everywhere, and toward the
earliest-listed anchor during assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

STRATEGIES = ("fps", "overlap", "kmeans_pose", "kmeans_feature")
KMEANS_MAX_ITER = 50


@dataclass(frozen=True)
class AnchorPartition:
    k: int
    anchors: tuple
    clusters: tuple
    strategy: str = "fps"

    def __post_init__(self):
        anchors = tuple(int(a) for a in self.anchors)
        clusters = tuple(tuple(int(s) for s in c) for c in self.clusters)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "clusters", clusters)
        if self.strategy not in STRATEGIES:
            raise InvalidInput(f"unknown strategy {self.strategy!r}")
        if not 1 <= len(anchors) <= self.k:
            raise InvalidInput(f"need 1 <= N <= k, got N={len(anchors)}, k={self.k}")
        if len(clusters) != len(anchors):
            raise InvalidInput("one cluster per anchor required")
        supports = [s for c in clusters for s in c]
        seen = anchors + tuple(supports)
        if len(set(seen)) != len(seen):
            raise InvalidInput("anchor and support indices must be distinct")
        if set(seen) != set(range(self.k)):
            raise InvalidInput("anchors and clusters must cover every view exactly once")

    @property
    def n(self):
        return len(self.anchors)

    @property
    def supports(self):
        return tuple(sorted(s for c in self.clusters for s in c))

    def to_dict(self):
        return {"anchors": list(self.anchors), "clusters": [list(c) for c in self.clusters], "strategy": self.strategy}

    @classmethod
    def from_dict(cls, d, k=None):
        anchors = d["anchors"]
        clusters = d["clusters"]
        if k is None:
            k = len(anchors) + sum(len(c) for c in clusters)
        return cls(k, anchors, clusters, d.get("strategy", "fps"))


def _check_n(n, k):
    if int(n) != n or not 1 <= n <= k:
        raise InvalidInput(f"anchor count must satisfy 1 <= n <= {k}, got {n}")
    return int(n)


def select_anchors_fps(distances, n, first=None, seed=None):
    """Greedy farthest-point sampling over a view distance matrix.

    ``first`` fixes the first anchor; otherwise it is drawn uniformly with
    ``seed``. Each next anchor maximizes its minimum distance to the anchors
    chosen so far. Returns indices in selection order.
    """
    dist = np.asarray(distances, dtype=np.float64)
    k = dist.shape[0]
    n = _check_n(n, k)
    if first is None:
        first = int(np.random.default_rng(seed).integers(k))
    if not 0 <= first < k:
        raise InvalidInput(f"first anchor {first} out of range")
    chosen = [int(first)]
    mind = dist[first].copy()
    taken = np.zeros(k, dtype=bool)
    taken[first] = True
    for _ in range(n - 1):
        cand = np.where(taken, -np.inf, mind)
        nxt = int(np.argmax(cand))  # argmax returns the first maximum
        chosen.append(nxt)
        taken[nxt] = True
        mind = np.minimum(mind, dist[nxt])
    return chosen


def select_anchors_overlap(overlaps, n):
    """Greedy coverage: start at the view least overlapping all others, then
    repeatedly add the view with the lowest mean overlap to the chosen set."""
    ov = np.asarray(overlaps, dtype=np.float64)
    k = ov.shape[0]
    n = _check_n(n, k)
    off = ov.copy()
    np.fill_diagonal(off, 0.0)
    first_score = off.sum(axis=1) / max(k - 1, 1)
    chosen = [int(np.argmin(first_score))]
    taken = np.zeros(k, dtype=bool)
    taken[chosen[0]] = True
    for _ in range(n - 1):
        score = ov[:, chosen].mean(axis=1)
        score = np.where(taken, np.inf, score)
        nxt = int(np.argmin(score))
        chosen.append(nxt)
        taken[nxt] = True
    return chosen


def assign_supports(distances, anchors, strategy="fps"):
    """Send every non-anchor view to its nearest anchor (earliest on ties)."""
    dist = np.asarray(distances, dtype=np.float64)
    k = dist.shape[0]
    anchors = [int(a) for a in anchors]
    if not anchors:
        raise InvalidInput("at least one anchor required")
    if len(set(anchors)) != len(anchors):
        raise InvalidInput("duplicate anchors")
    if min(anchors) < 0 or max(anchors) >= k:
        raise InvalidInput("anchor index out of range")
    is_anchor = np.zeros(k, dtype=bool)
    is_anchor[anchors] = True
    clusters = [[] for _ in anchors]
    for j in range(k):
        if is_anchor[j]:
            continue
        clusters[int(np.argmin(dist[j, anchors]))].append(j)
    return AnchorPartition(k, anchors, clusters, strategy)


# k-means ----------------------------------------------------------------------


def _sqdist(x, c):
    d = x[:, None, :] - c[None, :, :]
    return (d * d).sum(axis=-1)


def _kmeanspp(x, n, rng):
    k = x.shape[0]
    centers = [x[int(rng.integers(k))]]
    for _ in range(n - 1):
        d2 = _sqdist(x, np.stack(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(k))
        else:
            idx = int(rng.choice(k, p=d2 / total))
        centers.append(x[idx])
    return np.stack(centers).astype(np.float64)


def kmeans(x, n, seed=0, max_iter=KMEANS_MAX_ITER):
    """Lloyd iterations from a k-means++ start.

    Returns (centroids, labels, iterations, converged). An emptied cluster is
    re-seeded at the point farthest from its currently assigned centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    k = x.shape[0]
    n = _check_n(n, k)
    if max_iter < 1:
        raise InvalidInput("max_iter must be >= 1")
    rng = np.random.default_rng(seed)
    cent = _kmeanspp(x, n, rng)
    labels = np.argmin(_sqdist(x, cent), axis=1)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        for c in range(n):
            members = labels == c
            if members.any():
                cent[c] = x[members].mean(axis=0)
            else:
                d2 = _sqdist(x, cent)[np.arange(k), labels]
                far = int(np.argmax(d2))
                cent[c] = x[far]
                labels[far] = c
        new = np.argmin(_sqdist(x, cent), axis=1)
        if np.array_equal(new, labels) and all((new == c).any() for c in range(n)):
            converged = True
            break
        labels = new
    if not converged:
        labels = _fill_empty(x, cent, labels, n)
    return cent, labels, it, converged


def _fill_empty(x, cent, labels, n):
    labels = labels.copy()
    for c in range(n):
        if (labels == c).any():
            continue
        counts = np.bincount(labels, minlength=n)
        d2 = ((x - cent[labels]) ** 2).sum(axis=1)
        d2 = np.where(counts[labels] > 1, d2, -np.inf)
        labels[int(np.argmax(d2))] = c
    return labels


def _anchors_from_kmeans(x, n, seed, max_iter, strategy):
    x = np.asarray(x, dtype=np.float64)
    k = x.shape[0]
    n = _check_n(n, k)
    cent, labels, _, _ = kmeans(x, n, seed, max_iter)
    anchors, clusters = [], []
    for c in range(n):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        d2 = ((x[members] - cent[c]) ** 2).sum(axis=1)
        a = int(members[int(np.argmin(d2))])
        anchors.append(a)
        clusters.append([int(m) for m in members if m != a])
    return AnchorPartition(k, anchors, clusters, strategy)


def select_anchors_kmeans(positions, n, seed=0, max_iter=KMEANS_MAX_ITER):
    """K-means on camera centers; each cluster's anchor is its member closest
    to the centroid and the other members form its support cluster."""
    return _anchors_from_kmeans(positions, n, seed, max_iter, "kmeans_pose")


def view_embeddings(features):
    """Per-view global embedding: the mean over the view's token grid."""
    return np.stack([np.asarray(f, dtype=np.float64).reshape(-1, np.shape(f)[-1]).mean(axis=0) for f in features])


def select_anchors_feature(embeddings, n, seed=0, max_iter=KMEANS_MAX_ITER):
    """Pose-free variant: K-means in per-view embedding space."""
    return _anchors_from_kmeans(embeddings, n, seed, max_iter, "kmeans_feature")


def partition_views(strategy, n, distances, *, first=None, seed=0, overlaps=None, positions=None, embeddings=None):
    """Run one selection strategy end to end and return an AnchorPartition."""
    if strategy == "fps":
        return assign_supports(distances, select_anchors_fps(distances, n, first=first, seed=seed), "fps")
    if strategy == "overlap":
        if overlaps is None:
            raise InvalidInput("overlap strategy needs an overlap matrix")
        return assign_supports(distances, select_anchors_overlap(overlaps, n), "overlap")
    if strategy == "kmeans_pose":
        return select_anchors_kmeans(positions, n, seed=seed)
    if strategy == "kmeans_feature":
        return select_anchors_feature(embeddings, n, seed=seed)
    raise InvalidInput(f"unknown strategy {strategy!r}")
