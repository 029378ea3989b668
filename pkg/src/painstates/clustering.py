"""k-means state discovery, model selection and robustness re-analysis."""

from __future__ import annotations

import datetime as dt
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    ConfigError,
    DimensionError,
    InfeasibleKError,
    InvariantError,
    UndefinedScoreError,
)

log = logging.getLogger(__name__)


def _map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map; ``threads`` only changes scheduling, never results."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _child_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(seed)).spawn(n)


def sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(len(X), len(C))``."""
    d = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


# --------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    wcss: float
    n_iter: int
    history: list[float]
    restart: int = 0


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    closest = sq_distances(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        np.minimum(closest, sq_distances(X, centers[c : c + 1])[:, 0], out=closest)
    return centers


def _centroid_update(X: np.ndarray, labels: np.ndarray, mind: np.ndarray, old: np.ndarray) -> np.ndarray:
    k, d = old.shape
    counts = np.bincount(labels, minlength=k).astype(float)
    sums = np.empty((k, d))
    for j in range(d):
        sums[:, j] = np.bincount(labels, weights=X[:, j], minlength=k)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        # reseed each empty cluster with the point farthest from its centroid
        far = mind.copy()
        for c in empty:
            idx = int(np.argmax(far))
            far[idx] = -1.0
            src = labels[idx]
            if counts[src] > 1:
                counts[src] -= 1
                sums[src] -= X[idx]
            counts[c] = 1
            sums[c] = X[idx]
    return sums / counts[:, None]


def lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int = 300, tol: float = 1e-6) -> KMeansResult:
    """Lloyd iterations from given starting centroids.

    Stops when the relative WCSS decrease falls to ``tol`` or below. Raises
    InvariantError if WCSS ever increases beyond round-off.
    """
    C = np.array(centroids, dtype=float)
    history: list[float] = []
    prev = np.inf
    for it in range(1, max_iter + 1):
        D = sq_distances(X, C)
        labels = np.argmin(D, axis=1)
        mind = D[np.arange(len(X)), labels]
        w = float(mind.sum())
        if w > prev * (1 + 1e-9) + 1e-12:
            raise InvariantError(f"Lloyd iteration increased WCSS: {prev} -> {w}")
        history.append(w)
        if np.isfinite(prev) and prev - w <= tol * prev:
            return KMeansResult(C, labels, w, it, history)
        prev = w
        C = _centroid_update(X, labels, mind, C)
    D = sq_distances(X, C)
    labels = np.argmin(D, axis=1)
    w = float(D[np.arange(len(X)), labels].sum())
    history.append(w)
    return KMeansResult(C, labels, w, max_iter, history)


def n_distinct(X: np.ndarray) -> int:
    return len(np.unique(np.asarray(X, dtype=float), axis=0))


def kmeans(
    X,
    k: int,
    seed: int = 0,
    restarts: int = 50,
    max_iter: int = 300,
    tol: float = 1e-6,
    init=None,
    threads: int = 1,
    check: bool = True,
) -> KMeansResult:
    """Best-of-``restarts`` k-means with k-means++ seeding.

    Each restart draws from its own child of ``SeedSequence(seed)``, so the
    result depends only on ``(X, k, seed, restarts)`` and not on ``threads``.
    The restart with minimum WCSS wins; ties go to the lowest restart index.
    Pass ``init`` (k x d) to run a single Lloyd descent from fixed centroids.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("X must be 2-D")
    if k < 1:
        raise InfeasibleKError("k must be >= 1")
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (k, X.shape[1]):
            raise DimensionError(f"init must have shape {(k, X.shape[1])}")
        return lloyd(X, init, max_iter, tol)
    if check and k > n_distinct(X):
        raise InfeasibleKError(f"k={k} exceeds the number of distinct rows")

    def run(args):
        idx, child = args
        rng = np.random.default_rng(child)
        res = lloyd(X, kmeans_plusplus(X, k, rng), max_iter, tol)
        res.restart = idx
        return res

    results = _map(run, list(enumerate(_child_seeds(seed, max(restarts, 1)))), threads)
    best = results[0]
    for res in results[1:]:
        if res.wcss < best.wcss:
            best = res
    return best


def assign_nearest(X, centroids) -> np.ndarray:
    return np.argmin(sq_distances(np.asarray(X, float), np.asarray(centroids, float)), axis=1)


def wcss_of(X, centroids) -> float:
    D = sq_distances(np.asarray(X, float), np.asarray(centroids, float))
    return float(D.min(axis=1).sum())


def wcss_curve(X, k_range: Iterable[int], seed: int = 0, restarts: int = 50, threads: int = 1) -> list[float]:
    """Best-restart WCSS for each k, forced non-increasing.

    Best-of-restarts can in rare cases miss the optimum for a larger k; the
    running minimum reflects that a (k+1)-solution is never worse than the
    best k-solution with one centroid duplicated.
    """
    X = np.asarray(X, dtype=float)
    out = []
    for k in k_range:
        if not 1 <= k <= len(X):
            raise ConfigError(f"k={k} outside [1, n]", field="k_range")
        # duplicate rows are allowed here: surplus centroids just add zero cost
        w = kmeans(X, k, seed, restarts, threads=threads, check=False).wcss
        out.append(min(w, out[-1]) if out else w)
    return out


# --------------------------------------------------------------------------
# silhouette


def silhouette_samples(X, labels, chunk: int = 1024) -> np.ndarray:
    """Per-point silhouette with Euclidean distance; singletons score 0."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    _, lab = np.unique(labels, return_inverse=True)
    k = lab.max() + 1 if len(lab) else 0
    if k < 2:
        raise UndefinedScoreError("silhouette needs at least 2 clusters")
    n = len(X)
    counts = np.bincount(lab, minlength=k).astype(float)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0
    sq = (X * X).sum(axis=1)
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] - 2.0 * X[start:stop] @ X.T + sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        d = np.sqrt(d2)
        d[np.arange(stop - start), np.arange(start, stop)] = 0.0
        sums = d @ onehot
        own = lab[start:stop]
        own_count = counts[own]
        rows = np.arange(stop - start)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = sums[rows, own] / (own_count - 1)
            mean_other = sums / counts[None, :]
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, (b - a) / denom, 0.0)
        s[own_count == 1] = 0.0
        out[start:stop] = s
    return out


def silhouette(X, labels) -> float:
    return float(np.mean(silhouette_samples(X, labels)))


# --------------------------------------------------------------------------
# agglomerative (Ward)


def agglomerative(X, k: int) -> np.ndarray:
    """Ward-linkage agglomeration cut at ``k`` clusters.

    Works on squared Euclidean distances with the Lance-Williams update. A
    cluster is identified by its lowest member index and the merged pair is
    the lexicographically smallest among those at minimum distance. Labels
    are numbered by each cluster's lowest member index.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if not 1 <= k <= n:
        raise ConfigError(f"k={k} outside [1, {n}]", field="k")
    D = sq_distances(X, X)
    # exact zeros on the diagonal and exact symmetry
    D = np.triu(D, 1)
    D = D + D.T
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    parent = np.arange(n)

    rowmin = np.full(n, np.inf)
    rowarg = np.full(n, -1)

    def refresh(r: int) -> None:
        tail = D[r, r + 1 :]
        if tail.size == 0:
            rowmin[r], rowarg[r] = np.inf, -1
            return
        j = int(np.argmin(tail))
        rowmin[r], rowarg[r] = tail[j], r + 1 + j

    for r in range(n):
        refresh(r)

    for _ in range(n - k):
        i = int(np.argmin(rowmin))
        j = int(rowarg[i])
        ni, nj = size[i], size[j]
        nk = size
        new = ((ni + nk) * D[i] + (nj + nk) * D[j] - nk * D[i, j]) / (ni + nj + nk)
        new[~active] = np.inf
        new[i] = new[j] = np.inf
        D[i, :] = new
        D[:, i] = new
        D[j, :] = np.inf
        D[:, j] = np.inf
        active[j] = False
        size[i] = ni + nj
        parent[parent == j] = i
        rowmin[j], rowarg[j] = np.inf, -1

        stale = np.flatnonzero(active & ((rowarg == i) | (rowarg == j)))
        refresh(i)
        for r in stale:
            if r != i:
                refresh(r)
        # rows above i whose nearest neighbour was elsewhere: only D[r, i] changed
        above = np.flatnonzero(active[:i])
        if len(above):
            cand = D[above, i]
            better = (cand < rowmin[above]) | ((cand == rowmin[above]) & (i < rowarg[above]))
            rowmin[above[better]] = cand[better]
            rowarg[above[better]] = i

    _, labels = np.unique(parent, return_inverse=True)
    return labels


# --------------------------------------------------------------------------
# agreement and consensus


def adjusted_rand_index(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError("label vectors differ in length")
    n = len(a)
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    index = comb2(table).sum()
    sa = comb2(table.sum(axis=1)).sum()
    sb = comb2(table.sum(axis=0)).sum()
    expected = sa * sb / comb2(n)
    max_index = (sa + sb) / 2.0
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def consensus(
    X,
    k: int,
    resamples: int = 100,
    fraction: float = 0.8,
    seed: int = 0,
    restarts: int = 5,
    pac_bounds: tuple[float, float] = (0.1, 0.9),
    threads: int = 1,
) -> tuple[np.ndarray, float]:
    """Resampling consensus matrix and PAC score.

    Each resample draws ``round(fraction * n)`` rows without replacement and
    clusters them with k-means. Entry ``(i, j)`` is the share of co-sampled
    resamples in which ``i`` and ``j`` shared a cluster; pairs never sampled
    together are NaN and left out of the PAC, the share of off-diagonal pairs
    strictly inside ``pac_bounds``.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("must lie in (0, 1]", field="fraction")
    X = np.asarray(X, dtype=float)
    n = len(X)
    m = max(int(round(fraction * n)), k)
    if m > n:
        raise InfeasibleKError(f"k={k} exceeds the number of rows")

    def run(child):
        rng = np.random.default_rng(child)
        idx = np.sort(rng.choice(n, size=m, replace=False))
        sub_seed = int(child.generate_state(1)[0])
        sub = X[idx]
        kk = min(k, n_distinct(sub))
        labels = kmeans(sub, kk, sub_seed, restarts, check=False).labels
        return idx, labels

    together = np.zeros((n, n))
    sampled = np.zeros((n, n))
    for idx, labels in _map(run, _child_seeds(seed, resamples), threads):
        block = np.ix_(idx, idx)
        sampled[block] += 1.0
        together[block] += labels[:, None] == labels[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        cm = np.where(sampled > 0, together / sampled, np.nan)
    iu = np.triu_indices(n, 1)
    vals = cm[iu]
    vals = vals[~np.isnan(vals)]
    lo, hi = pac_bounds
    pac = float(np.mean((vals > lo) & (vals < hi))) if len(vals) else 0.0
    return cm, pac


# --------------------------------------------------------------------------
# model selection


@dataclass
class SelectionConfig:
    restarts: int = 50
    silhouette_sample: int = 2000
    agglomerative_sample: int = 1500
    consensus_sample: int = 400
    consensus_resamples: int = 100
    consensus_fraction: float = 0.8
    consensus_restarts: int = 5


@dataclass
class KSelectionReport:
    k_range: list[int]
    wcss_curve: list[float]
    silhouette_curve: list[float]
    agglomerative_ari_curve: list[float]
    consensus_pac_curve: list[float]
    chosen_k: int
    votes: dict[str, int]
    elbow_anchor_wcss: float | None = None

    def to_dict(self) -> dict:
        return {
            "k_range": list(self.k_range),
            "wcss_curve": list(self.wcss_curve),
            "silhouette_curve": list(self.silhouette_curve),
            "agglomerative_ari_curve": list(self.agglomerative_ari_curve),
            "consensus_pac_curve": list(self.consensus_pac_curve),
            "elbow_anchor_wcss": self.elbow_anchor_wcss,
            "votes": dict(self.votes),
            "chosen_k": self.chosen_k,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "KSelectionReport":
        return cls(
            k_range=[int(k) for k in d["k_range"]],
            wcss_curve=list(d["wcss_curve"]),
            silhouette_curve=list(d["silhouette_curve"]),
            agglomerative_ari_curve=list(d["agglomerative_ari_curve"]),
            consensus_pac_curve=list(d["consensus_pac_curve"]),
            chosen_k=int(d["chosen_k"]),
            votes={k: int(v) for k, v in d["votes"].items()},
            elbow_anchor_wcss=d.get("elbow_anchor_wcss"),
        )


def elbow_vote(k_range: Sequence[int], wcss: Sequence[float], anchor: float | None = None) -> int:
    """k with the largest second difference ``W(k-1) - 2 W(k) + W(k+1)``.

    ``anchor`` is ``W(k_min - 1)``; without it the smallest k has no left
    neighbour and cannot be chosen.
    """
    ks = list(k_range)
    w = list(wcss)
    if anchor is not None:
        ks = [ks[0] - 1] + ks
        w = [anchor] + w
    best_k, best = ks[1], -np.inf
    for i in range(1, len(ks) - 1):
        sd = w[i - 1] - 2 * w[i] + w[i + 1]
        if sd > best:
            best_k, best = ks[i], sd
    return best_k


def _best_k(values: Sequence[float], ks: Sequence[int], maximize: bool, prefer_larger: bool = False) -> int:
    """k at the best score; exact ties go to the smaller k unless ``prefer_larger``."""
    arr = np.asarray(values, dtype=float)
    arr = np.where(np.isnan(arr), -np.inf if maximize else np.inf, arr)
    best = arr.max() if maximize else arr.min()
    tied = [k for k, v in zip(ks, arr) if abs(v - best) <= 1e-12]
    return max(tied) if prefer_larger else min(tied)


def _subsample(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    if n <= size:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


def select_k(
    X,
    k_range: Sequence[int] = tuple(range(2, 11)),
    seed: int = 0,
    config: SelectionConfig | None = None,
    threads: int = 1,
) -> KSelectionReport:
    """Vote on k with four criteria and take the plurality (ties -> smaller k).

    * elbow: largest second difference of the WCSS curve
    * silhouette: maximum mean silhouette
    * agglomerative: maximum ARI between k-means and Ward labels
    * consensus: minimum PAC

    Within a criterion, equal scores go to the smaller k, except that the
    agglomerative and consensus criteria take the larger k.

    The pairwise criteria run on fixed, seeded subsamples whose sizes come
    from ``config``.
    """
    X = np.asarray(X, dtype=float)
    ks = sorted(int(k) for k in k_range)
    if len(ks) < 2:
        raise ConfigError("need at least two candidate k values", field="k_range")
    if ks[0] < 1 or ks[-1] >= len(X):
        raise ConfigError(f"k_range must lie within [1, {len(X) - 1}]", field="k_range")
    cfg = config or SelectionConfig()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    sil_idx = _subsample(len(X), cfg.silhouette_sample, rng)
    agg_idx = _subsample(len(X), cfg.agglomerative_sample, rng)
    con_idx = _subsample(len(X), cfg.consensus_sample, rng)

    wcss, sil, ari, pac = [], [], [], []
    for k in ks:
        res = kmeans(X, k, seed, cfg.restarts, threads=threads)
        wcss.append(min(res.wcss, wcss[-1]) if wcss else res.wcss)
        sl = res.labels[sil_idx]
        sil.append(silhouette(X[sil_idx], sl) if len(np.unique(sl)) > 1 else np.nan)
        ari.append(adjusted_rand_index(res.labels[agg_idx], agglomerative(X[agg_idx], k)))
        _, p = consensus(
            X[con_idx],
            k,
            cfg.consensus_resamples,
            cfg.consensus_fraction,
            seed,
            cfg.consensus_restarts,
            threads=threads,
        )
        pac.append(p)

    anchor = None
    if ks[0] >= 2:
        anchor = kmeans(X, ks[0] - 1, seed, cfg.restarts, threads=threads).wcss
        anchor = max(anchor, wcss[0])
    votes = {
        "elbow": elbow_vote(ks, wcss, anchor),
        "silhouette": _best_k(sil, ks, maximize=True),
        # perfect agreement or stability at a larger k is the stronger finding
        "agglomerative": _best_k(ari, ks, maximize=True, prefer_larger=True),
        "consensus": _best_k(pac, ks, maximize=False, prefer_larger=True),
    }
    tally = {k: list(votes.values()).count(k) for k in ks}
    top = max(tally.values())
    chosen = min(k for k, c in tally.items() if c == top)
    return KSelectionReport(ks, wcss, sil, ari, pac, chosen, votes, anchor)


# --------------------------------------------------------------------------
# model container


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    feature_names: list[str]
    seed: int
    wcss: float
    normalization: dict | None = None
    selection: KSelectionReport | None = None
    ranking: list[str] | None = None
    modality: str = "questionnaires"
    n_samples: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float)
        if self.centroids.shape != (self.k, len(self.feature_names)):
            raise DimensionError(
                f"centroids shape {self.centroids.shape} != ({self.k}, {len(self.feature_names)})"
            )

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "feature_names": list(self.feature_names),
            "centroids": self.centroids.tolist(),
            "normalization": self.normalization,
            "seed": self.seed,
            "wcss": self.wcss,
            "n_samples": self.n_samples,
            "modality": self.modality,
            "selection": None if self.selection is None else self.selection.to_dict(),
            "ranking": None if self.ranking is None else list(self.ranking),
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClusterModel":
        sel = d.get("selection")
        return cls(
            k=int(d["k"]),
            centroids=np.array(d["centroids"], dtype=float).reshape(int(d["k"]), len(d["feature_names"])),
            feature_names=list(d["feature_names"]),
            seed=int(d["seed"]),
            wcss=float(d["wcss"]),
            normalization=d.get("normalization"),
            selection=None if sel is None else KSelectionReport.from_dict(sel),
            ranking=None if d.get("ranking") is None else list(d["ranking"]),
            modality=d.get("modality", "questionnaires"),
            n_samples=int(d.get("n_samples", 0)),
            extra=dict(d.get("extra", {})),
        )


def fit_model(
    X,
    feature_names: Sequence[str],
    k: int,
    seed: int = 0,
    restarts: int = 50,
    threads: int = 1,
    **kwargs,
) -> ClusterModel:
    res = kmeans(X, k, seed, restarts, threads=threads)
    return ClusterModel(
        k=k,
        centroids=res.centroids,
        feature_names=list(feature_names),
        seed=seed,
        wcss=res.wcss,
        n_samples=len(np.asarray(X)),
        **kwargs,
    )


# --------------------------------------------------------------------------
# alignment and robustness


@dataclass
class Alignment:
    mapping: list[int]  # mapping[i] = index in model B matched to centroid i of A
    total_distance: float
    distances: list[float]
    cosine: list[float]


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 1.0 if nu == nv else 0.0
    return float(np.dot(u, v) / (nu * nv))


def align_centroids(A, B) -> Alignment:
    """Bijective matching of centroid rows minimizing summed Euclidean distance."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise DimensionError(f"cannot align centroid sets of shapes {A.shape} and {B.shape}")
    # direct differences: k is small and the expanded form loses precision near zero
    cost = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    mapping = [int(c) for _, c in sorted(zip(rows, cols))]
    dists = [float(cost[i, mapping[i]]) for i in range(len(A))]
    return Alignment(mapping, float(sum(dists)), dists, [_cosine(A[i], B[mapping[i]]) for i in range(len(A))])


def align_clusters(model_a: ClusterModel, model_b: ClusterModel) -> Alignment:
    if model_a.k != model_b.k:
        raise DimensionError(f"k differs ({model_a.k} vs {model_b.k})")
    if list(model_a.feature_names) != list(model_b.feature_names):
        raise DimensionError("feature spaces differ")
    return align_centroids(model_a.centroids, model_b.centroids)


@dataclass
class RobustnessReport:
    variant: str
    window: str | None
    n_samples: int
    mapping: list[int]
    centroid_similarity: list[float]
    centroid_distance: list[float]
    ari_to_reference: float
    centroids: np.ndarray

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "window": self.window,
            "n_samples": self.n_samples,
            "alignment": list(self.mapping),
            "centroid_similarity": list(self.centroid_similarity),
            "centroid_distance": list(self.centroid_distance),
            "ari_to_reference": self.ari_to_reference,
            "aligned_centroids": self.centroids.tolist(),
        }


TEMPORAL_WINDOWS = (
    ("pre_event", None, 0),
    ("event_to_6m", 0, 182),
    ("6m_to_12m", 182, 365),
)


def high_responders(rates: Mapping[str, float], n_sd: float = 2.0) -> set[str]:
    """Participants whose mean responses/day exceed the cohort mean + ``n_sd`` SD."""
    if not rates:
        return set()
    vals = np.array(list(rates.values()), dtype=float)
    cut = vals.mean() + n_sd * (vals.std(ddof=1) if len(vals) > 1 else 0.0)
    return {pid for pid, r in rates.items() if r > cut}


def robustness_splits(
    vectors: Sequence,
    reference: ClusterModel,
    split: str = "high_responders",
    response_rates: Mapping[str, float] | None = None,
    event_dates: Mapping[str, dt.date] | None = None,
    restarts: int = 50,
    threads: int = 1,
    include_full: bool = True,
) -> list[RobustnessReport]:
    """Refit k-means on data subsets and compare each to ``reference``.

    ``split`` is ``high_responders`` (drop participants above mean + 2 SD
    responses/day) or ``temporal`` (pre-event, event to +6 months, +6 to +12
    months, relative to each participant's event date). Subsets with fewer
    than ``10 * k`` samples are skipped with a warning.
    """
    names = reference.feature_names
    k = reference.k
    subsets: list[tuple[str, str | None, list[int]]] = []
    if include_full:
        subsets.append(("all", None, list(range(len(vectors)))))
    if split == "high_responders":
        drop = high_responders(response_rates or {})
        subsets.append(
            ("high_responders_excluded", None, [i for i, v in enumerate(vectors) if v.participant_id not in drop])
        )
    elif split == "temporal":
        events = event_dates or {}
        for name, lo, hi in TEMPORAL_WINDOWS:
            idx = []
            for i, v in enumerate(vectors):
                ev = events.get(v.participant_id)
                if ev is None:
                    continue
                off = (v.date - ev).days
                if (lo is None or off >= lo) and off < hi:
                    idx.append(i)
            subsets.append(("temporal_window", name, idx))
    else:
        raise ConfigError(f"unknown split {split!r}", field="split")

    X = np.array([[v.values[n] for n in names] for v in vectors], dtype=float)
    reports = []
    for variant, window, idx in subsets:
        if len(idx) < 10 * k:
            log.warning("skipping %s%s: %d samples < %d", variant, f"/{window}" if window else "", len(idx), 10 * k)
            continue
        Xs = X[idx]
        if n_distinct(Xs) < k:
            log.warning("skipping %s: fewer than k distinct rows", variant)
            continue
        res = kmeans(Xs, k, reference.seed, restarts, threads=threads)
        al = align_centroids(reference.centroids, res.centroids)
        ref_labels = assign_nearest(Xs, reference.centroids)
        reports.append(
            RobustnessReport(
                variant=variant,
                window=window,
                n_samples=len(idx),
                mapping=al.mapping,
                centroid_similarity=al.cosine,
                centroid_distance=al.distances,
                ari_to_reference=adjusted_rand_index(ref_labels, res.labels),
                centroids=res.centroids[al.mapping],
            )
        )
    return reports
