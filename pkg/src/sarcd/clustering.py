"""Superpixel difference vectors, three-class fuzzy c-means and Eq.-style voting.

Class codes are ordered by the mean of their FCM centre: LOW (unchanged in
phase 1, false change in phase 2), MID (intermediate), HIGH (changed / real
change).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

log = logging.getLogger(__name__)

LOW, MID, HIGH = 0, 1, 2
CLASS_NAMES = {LOW: "low", MID: "mid", HIGH: "high"}


@dataclass(frozen=True)
class DiffVector:
    segment_id: int
    sub_index: int
    values: np.ndarray


@dataclass
class FcmResult:
    centers: np.ndarray  # (c, d), sorted by ascending mean
    memberships: np.ndarray  # (n, c)
    hard_labels: np.ndarray  # (n,) in {LOW, MID, HIGH}
    objective: list
    n_iter: int
    converged: bool
    degenerate: bool = False


class DegenerateClustering(RuntimeError):
    """Clustering cannot provide the labels a later stage needs."""


def spdi(v1, v2) -> np.ndarray:
    """Elementwise |v1 - v2| for stacked vectors."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise ValueError(f"mismatched vector shapes {v1.shape} vs {v2.shape}")
    return np.abs(v1 - v2)


def build_spdi(pairs) -> list[DiffVector]:
    """Difference vectors for (image-1, image-2) PatchVector pairs."""
    out = []
    for a, b in pairs:
        if (a.segment_id, a.sub_index) != (b.segment_id, b.sub_index):
            raise ValueError(
                f"mismatched pairing: ({a.segment_id}, {a.sub_index}) vs "
                f"({b.segment_id}, {b.sub_index})")
        out.append(DiffVector(a.segment_id, a.sub_index, spdi(a.values, b.values)))
    return out


def _as_matrix(vectors) -> np.ndarray:
    if len(vectors) and isinstance(vectors[0], DiffVector):
        vectors = [v.values for v in vectors]
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _memberships(X, centers, m):
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    zero = d2 == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        w = d2 ** (-1.0 / (m - 1.0))
        u = w / w.sum(axis=1, keepdims=True)
    hit = zero.any(axis=1)
    if hit.any():
        # a point sitting on a centre belongs to it crisply (first such centre)
        first = np.argmax(zero[hit], axis=1)
        u[hit] = 0.0
        u[np.flatnonzero(hit), first] = 1.0
    return u, d2


def _init_centers(X, c, rng):
    """k-means++ style pick of c distinct data vectors."""
    distinct = np.unique(X, axis=0)
    if len(distinct) < c:
        log.warning("only %d distinct vectors for %d clusters", len(distinct), c)
        idx = np.arange(c) % len(distinct)
        return distinct[idx].copy()
    chosen = [int(rng.integers(len(distinct)))]
    d2 = ((distinct - distinct[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, c):
        chosen.append(int(rng.choice(len(distinct), p=d2 / d2.sum())))
        d2 = np.minimum(d2, ((distinct - distinct[chosen[-1]]) ** 2).sum(axis=1))
    return distinct[chosen].copy()


def fcm(vectors, c: int = 3, m: float = 2.0, tol: float = 1e-6, max_iter: int = 300,
        rng_seed: int = 0) -> FcmResult:
    """Fuzzy c-means with Euclidean distance.

    Alternates membership and centre updates until the largest centre
    displacement drops below `tol`. Clusters are returned sorted by the mean
    of their centre vector, so label codes do not depend on initialisation.
    """
    X = _as_matrix(vectors)
    n = len(X)
    if n < c:
        raise ValueError(f"need at least {c} vectors, got {n}")
    if not m > 1:
        raise ValueError("fuzzifier m must exceed 1")
    if np.all(X == X[0]):
        log.warning("all %d vectors identical; clustering is degenerate", n)
        u = np.zeros((n, c))
        u[:, MID] = 1.0
        return FcmResult(X[:1].copy(), u, np.full(n, MID), [0.0], 0, True, True)

    rng = np.random.default_rng(rng_seed)
    centers = _init_centers(X, c, rng)
    objective = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u, _ = _memberships(X, centers, m)
        um = u ** m
        new = (um.T @ X) / um.sum(axis=0)[:, None]
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        objective.append(float((um * d2).sum()))
        if shift < tol:
            converged = True
            break

    order = np.argsort(centers.mean(axis=1), kind="stable")
    centers = centers[order]
    u, _ = _memberships(X, centers, m)
    return FcmResult(centers, u, np.argmax(u, axis=1), objective, it, converged)


def fcm_objective(X, u, centers, m: float = 2.0) -> float:
    X = _as_matrix(X)
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return float(((u ** m) * d2).sum())


def _vote(n_high, n_mid, n, high, low):
    high, low = Fraction(str(high)), Fraction(str(low))
    # Lambda / n with weights 1, 0.5, 0  ->  (2 n_high + n_mid) / (2 n)
    twice = 2 * n_high + n_mid
    return np.where(twice * high.denominator >= 2 * n * high.numerator, HIGH,
                    np.where(twice * low.denominator >= 2 * n * low.numerator, MID, LOW))


def vote_label(labels, high: float = 0.8, low: float = 0.5) -> int:
    """Class of one superpixel from the classes of its q+1 sub-vectors."""
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise ValueError("no labels to vote on")
    return int(_vote(int((labels == HIGH).sum()), int((labels == MID).sum()),
                     labels.size, high, low))


def vote_segments(segment_id, labels, n_segments: int, high: float = 0.8,
                  low: float = 0.5) -> np.ndarray:
    """Vectorised vote_label over every segment; segments without vectors get -1."""
    segment_id = np.asarray(segment_id)
    labels = np.asarray(labels)
    n = np.bincount(segment_id, minlength=n_segments)
    n_high = np.bincount(segment_id, weights=labels == HIGH, minlength=n_segments).astype(np.int64)
    n_mid = np.bincount(segment_id, weights=labels == MID, minlength=n_segments).astype(np.int64)
    out = _vote(n_high, n_mid, n, high, low).astype(np.int64)
    out[n == 0] = -1
    return out
