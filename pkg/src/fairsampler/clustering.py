"""Behavioural profiles: summary embedding of sequences and k-means clustering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .data import Dataset
from .errors import CoverageMismatch, DegenerateData, InputError, KTooLarge


def summarize_sequence(seq: np.ndarray) -> np.ndarray:
    """Mean, std, last value and least-squares slope of every feature of a T x D sequence.

    Returns a flat vector laid out as ``[means, stds, lasts, slopes]`` (4 * D).
    A length-1 sequence has slope 0.
    """
    seq = np.asarray(seq, dtype=float)
    n_steps = seq.shape[0]
    mean = seq.mean(axis=0)
    std = seq.std(axis=0)
    last = seq[-1]
    if n_steps > 1:
        t = np.arange(n_steps, dtype=float)
        tc = t - t.mean()
        slope = tc @ (seq - mean) / (tc @ tc)
    else:
        slope = np.zeros(seq.shape[1])
    return np.concatenate([mean, std, last, slope])


def raw_features(records) -> np.ndarray:
    """Unstandardised summary embedding of each record's behaviour, one row per record."""
    records = list(records)
    if not records:
        return np.zeros((0, 0))
    lengths = {r.behavior.shape for r in records}
    if len(lengths) == 1:
        # equal-length fast path
        seq = np.stack([r.behavior for r in records])
        n_steps = seq.shape[1]
        mean = seq.mean(axis=1)
        std = seq.std(axis=1)
        last = seq[:, -1]
        if n_steps > 1:
            tc = np.arange(n_steps, dtype=float) - (n_steps - 1) / 2
            slope = np.einsum("t,ntd->nd", tc, seq - mean[:, None, :]) / (tc @ tc)
        else:
            slope = np.zeros_like(mean)
        return np.concatenate([mean, std, last, slope], axis=1)
    return np.stack([summarize_sequence(r.behavior) for r in records])


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        return cls(x.mean(axis=0), x.std(axis=0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        scale = np.where(self.std > 0, self.std, 1.0)
        z = (x - self.mean) / scale
        z[:, self.std == 0] = 0.0
        return z

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Standardizer":
        return cls(np.asarray(obj["mean"], dtype=float), np.asarray(obj["std"], dtype=float))


@dataclass(frozen=True)
class BehaviorEmbedding:
    student_ids: tuple
    raw: np.ndarray
    scaler: Standardizer

    @property
    def vectors(self) -> np.ndarray:
        return self.scaler.transform(self.raw)

    @property
    def dim(self) -> int:
        return self.raw.shape[1]


def embed_behavior(dataset: Dataset) -> BehaviorEmbedding:
    raw = raw_features(dataset.records)
    return BehaviorEmbedding(tuple(dataset.student_ids), raw, Standardizer.fit(raw))


@dataclass
class ClusteringResult:
    k: int
    assignment: dict
    centroids: np.ndarray
    inertia: float
    silhouette: float
    seed: int
    inertia_trace: list = field(default_factory=list, repr=False)

    def sizes(self) -> dict:
        out = {c: 0 for c in range(self.k)}
        for c in self.assignment.values():
            out[c] += 1
        return out

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "inertia": self.inertia,
            "silhouette": self.silhouette,
            "centroids": self.centroids.tolist(),
            "assignment": dict(self.assignment),
        }

    @classmethod
    def from_json(cls, obj) -> "ClusteringResult":
        return cls(int(obj["k"]), {str(s): int(c) for s, c in obj["assignment"].items()},
                   np.asarray(obj["centroids"], dtype=float), float(obj["inertia"]),
                   float(obj["silhouette"]), int(obj["seed"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ClusteringResult":
        return cls.from_json(json.loads(Path(path).read_text()))


def _sq_dists(x, centers):
    return cdist(x, centers, "sqeuclidean")


def _kmeanspp(x, k, rng):
    """Greedy k-means++: several candidates per step, keep the one with lowest potential."""
    n = x.shape[0]
    n_trials = 2 + int(np.log(k))
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        cand = rng.choice(n, size=n_trials, p=closest / total)
        cand_d = np.minimum(closest[None, :], _sq_dists(x, x[cand]).T)
        best = int(np.argmin(cand_d.sum(axis=1)))
        centers[c] = x[cand[best]]
        closest = cand_d[best]
    return centers


def _lloyd(x, centers, max_iter, tol):
    trace = []
    labels = None
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        labels = d.argmin(axis=1)
        counts = np.bincount(labels, minlength=len(centers))
        if np.any(counts == 0):
            # reseed each empty cluster at the point farthest from its centroid
            best = d[np.arange(len(x)), labels]
            for c in np.flatnonzero(counts == 0):
                far = int(np.argmax(best))
                centers[c] = x[far]
                best[far] = 0.0
            d = _sq_dists(x, centers)
            labels = d.argmin(axis=1)
        trace.append(float(d[np.arange(len(x)), labels].sum()))
        new = centers.copy()
        for c in range(len(centers)):
            members = labels == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    d = _sq_dists(x, centers)
    labels = d.argmin(axis=1)
    for _ in range(len(centers)):
        counts = np.bincount(labels, minlength=len(centers))
        if np.all(counts > 0):
            break
        best = d[np.arange(len(x)), labels]
        c = int(np.flatnonzero(counts == 0)[0])
        centers[c] = x[int(np.argmax(best))]
        d = _sq_dists(x, centers)
        labels = d.argmin(axis=1)
    inertia = float(d[np.arange(len(x)), labels].sum())
    trace.append(inertia)
    return centers, labels, inertia, trace


def silhouette_score(x: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient; members of singleton clusters score 0."""
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        return 0.0
    dist = cdist(x, x)
    onehot = (labels[:, None] == uniq[None, :]).astype(float)
    sizes = onehot.sum(axis=0)
    sums = dist @ onehot
    own = np.searchsorted(uniq, labels)
    n = len(labels)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(n), own] / np.maximum(own_size - 1, 1), 0.0)
    mean_other = sums / sizes[None, :]
    mean_other[np.arange(n), own] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1), 0.0)
    return float(s.mean())


def kmeans(embedding, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300,
           tol: float = 1e-6) -> ClusteringResult:
    """Best-of-``restarts`` Lloyd k-means on the standardised embedding.

    ``embedding`` may be a :class:`BehaviorEmbedding` or a plain array (rows
    are then identified by their index as a string).
    """
    x, ids = _unpack(embedding)
    if k < 2:
        raise InputError("k must be at least 2")
    distinct = np.unique(x, axis=0).shape[0]
    if distinct == 1:
        raise DegenerateData("all embedded rows are identical")
    if k > distinct:
        raise KTooLarge(f"k={k} exceeds the {distinct} distinct embedded rows")
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        centers, labels, inertia, trace = _lloyd(x, _kmeanspp(x, k, rng), max_iter, tol)
        # strict "<" keeps the earliest restart on ties
        if best is None or inertia < best[2]:
            best = (centers, labels, inertia, trace)
    centers, labels, inertia, trace = best
    return ClusteringResult(
        k=k,
        assignment={sid: int(c) for sid, c in zip(ids, labels)},
        centroids=centers,
        inertia=inertia,
        silhouette=silhouette_score(x, labels),
        seed=seed,
        inertia_trace=trace,
    )


def select_k(embedding, k_range=(2, 8), seed: int = 0, fixed_k: int | None = None,
             **kwargs) -> ClusteringResult:
    """Pick k in the inclusive ``k_range`` with the highest mean silhouette.

    Ties go to the smaller k. ``fixed_k`` bypasses the search.
    """
    if fixed_k is not None:
        return kmeans(embedding, fixed_k, seed, **kwargs)
    lo, hi = k_range
    best = None
    for k in range(lo, hi + 1):
        res = kmeans(embedding, k, seed, **kwargs)
        if best is None or res.silhouette > best.silhouette:
            best = res
    return best


def assign_clusters(dataset: Dataset, result: ClusteringResult) -> Dataset:
    ids = set(dataset.student_ids)
    if set(result.assignment) != ids:
        raise CoverageMismatch("clustering result does not cover exactly the dataset's students")
    return dataset.with_clusters(result.assignment)


def _unpack(embedding):
    if isinstance(embedding, BehaviorEmbedding):
        return embedding.vectors, embedding.student_ids
    x = np.asarray(embedding, dtype=float)
    return x, tuple(str(i) for i in range(x.shape[0]))
