"""k-means regime discovery on connectivity vectors, PCA embedding and regime timelines."""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from resources.utils.errors import InvalidParameter, KTooLarge, RankDeficient
from resources.utils.ica_core import centered_svd, numerical_rank

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 300


@dataclass(frozen=True, eq=False)
class RegimeLabeling:
    labels: np.ndarray
    centroids: np.ndarray  # k x dim
    k: int
    inertia: float
    seed: int

    def __post_init__(self):
        if np.any(self.labels < 0) or np.any(self.labels >= self.k):
            raise InvalidParameter("labels must lie in [0, k)")
        if not np.all(np.isfinite(self.centroids)):
            raise InvalidParameter("centroids must be finite")


def _sq_dist(X: np.ndarray, centres: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        closest = np.minimum(closest, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int) -> tuple[np.ndarray, np.ndarray, float]:
    centres = _kmeans_pp(X, k, rng)
    labels = np.full(X.shape[0], -1)
    for _ in range(max_iter):
        dist = _sq_dist(X, centres)
        new_labels = np.argmin(dist, axis=1)
        counts = np.bincount(new_labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            # reseed from the point farthest from its own centre
            far = int(np.argmax(dist[np.arange(X.shape[0]), new_labels]))
            centres[empty] = X[far]
            new_labels[far] = empty
            dist = _sq_dist(X, centres)
            counts = np.bincount(new_labels, minlength=k)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centres[c] = X[members].mean(axis=0)
    inertia = float(_sq_dist(X, centres)[np.arange(X.shape[0]), labels].sum())
    return labels, centres, inertia


def _relabel_by_first_occurrence(labels: np.ndarray, centres: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = list(dict.fromkeys(labels.tolist()))
    order += [c for c in range(centres.shape[0]) if c not in order]
    mapping = np.empty(len(order), dtype=int)
    mapping[order] = np.arange(len(order))
    return mapping[labels], centres[order]


def cluster_regimes(
    vectors,
    k: int,
    seed: int,
    restarts: int = 10,
    max_iter: int = DEFAULT_MAX_ITER,
    threads: int = 1,
) -> RegimeLabeling:
    """k-means++ with ``restarts`` independent runs; the lowest inertia wins (first run on ties).

    Labels are renumbered by first appearance along the input order.
    """
    X = np.asarray([getattr(v, "values", v) for v in vectors], dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidParameter("cluster_regimes needs a non-empty list of vectors")
    if not np.all(np.isfinite(X)):
        raise InvalidParameter("connectivity vectors must be finite")
    if k < 1 or restarts < 1:
        raise InvalidParameter("k and restarts must be >= 1")
    if k > X.shape[0]:
        raise KTooLarge(k, X.shape[0])

    streams = [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(restarts)]
    if threads > 1:
        fits = Parallel(n_jobs=threads, prefer="threads")(delayed(_lloyd)(X, k, rng, max_iter) for rng in streams)
    else:
        fits = [_lloyd(X, k, rng, max_iter) for rng in streams]

    best = 0
    for r in range(1, restarts):
        if fits[r][2] < fits[best][2]:
            best = r
    labels, centres, inertia = fits[best]
    labels, centres = _relabel_by_first_occurrence(labels, centres)
    logger.info("[REGIME] k=%d n=%d restarts=%d inertia=%.6g", k, X.shape[0], restarts, inertia)
    return RegimeLabeling(labels, centres, k, inertia, seed)


def pca_embed(vectors, dims: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Mean-centred projection on the top ``dims`` principal directions, with explained-variance ratios."""
    X = np.asarray([getattr(v, "values", v) for v in vectors], dtype=float)
    if X.ndim != 2 or dims < 1 or dims > X.shape[1]:
        raise InvalidParameter(f"dims={dims} must be in [1, {X.shape[1] if X.ndim == 2 else 0}]")
    _, _, s, Vt = centered_svd(X.T)
    if numerical_rank(s, X.shape) < dims:
        raise RankDeficient(dims, numerical_rank(s, X.shape))
    coords = Vt[:dims].T * s[:dims]
    explained = s[:dims] ** 2 / np.sum(s**2)
    return coords, explained


def regime_timeline(labels: Sequence[int], timestamps: Sequence) -> pd.DataFrame:
    """Contiguous runs of one regime: start, end, label, length."""
    labels = np.asarray(labels, dtype=int)
    timestamps = list(timestamps)
    if len(timestamps) != labels.size:
        raise InvalidParameter("one timestamp per label is required")
    runs = []
    start = 0
    for t in range(1, labels.size + 1):
        if t == labels.size or labels[t] != labels[start]:
            runs.append({"start": timestamps[start], "end": timestamps[t - 1], "label": int(labels[start]), "length": t - start})
            start = t
    return pd.DataFrame(runs, columns=["start", "end", "label", "length"])
