"""External validation of states against standard assessments, and ordinal ranking."""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import logging
import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
from scipy import stats

from .clustering import ClusterModel, _map
from .errors import DimensionError, ParseError, SchemaError, UndefinedScoreError

log = logging.getLogger(__name__)

INSTRUMENTS = ("ODI", "EQ5D_PAIN", "EQ5D_ACTIVITIES", "EQ5D_VAS_HEALTH")
ORIENTATION = {
    "ODI": "higher_is_worse",
    "EQ5D_PAIN": "higher_is_worse",
    "EQ5D_ACTIVITIES": "higher_is_worse",
    "EQ5D_VAS_HEALTH": "higher_is_better",
}
ASSESSMENTS_HEADER = ["participant_id", "date", "instrument", "score"]


@dataclass(frozen=True)
class AssessmentRecord:
    participant_id: str
    date: dt.date
    instrument: str
    score: float

    def __post_init__(self):
        if self.instrument not in ORIENTATION:
            raise SchemaError(f"unknown instrument {self.instrument!r}")

    @property
    def orientation(self) -> str:
        return ORIENTATION[self.instrument]


@dataclass
class DistanceSample:
    participant_id: str
    date: dt.date
    distances: np.ndarray


@dataclass
class ValidationPair:
    participant_id: str
    sample_date: dt.date
    assessment: AssessmentRecord
    centroid_distances: np.ndarray
    day_gap: int  # sample date minus assessment date


def read_assessments(stream: TextIO) -> list[AssessmentRecord]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ASSESSMENTS_HEADER:
        raise SchemaError("assessments.csv: expected " + ",".join(ASSESSMENTS_HEADER), line=1)
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            pid, day, inst, score = (c.strip() for c in row)
            out.append(AssessmentRecord(pid, dt.date.fromisoformat(day), inst, float(score)))
        except SchemaError as exc:
            raise SchemaError(str(exc), line=lineno) from exc
        except ValueError as exc:
            raise ParseError(f"malformed assessment row: {exc}", line=lineno) from exc
    return out


def write_assessments(stream: TextIO, records: Iterable[AssessmentRecord]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(ASSESSMENTS_HEADER)
    for a in records:
        writer.writerow([a.participant_id, a.date.isoformat(), a.instrument, repr(float(a.score))])


def centroid_distances(model: ClusterModel, vector) -> np.ndarray:
    """Euclidean distance from one feature vector to every centroid, in model order.

    ``vector`` may be a FeatureVector (looked up by the model's feature
    names) or a plain array.
    """
    if hasattr(vector, "values") and isinstance(vector.values, Mapping):
        missing = [n for n in model.feature_names if n not in vector.values]
        if missing:
            raise DimensionError(f"feature vector lacks {missing}")
        x = np.array([vector.values[n] for n in model.feature_names], dtype=float)
    else:
        x = np.asarray(vector, dtype=float)
    if x.shape != (len(model.feature_names),):
        raise DimensionError(f"expected {len(model.feature_names)} features, got shape {x.shape}")
    return np.sqrt(((model.centroids - x) ** 2).sum(axis=1))


def distance_samples(model: ClusterModel, vectors: Iterable) -> list[DistanceSample]:
    return [DistanceSample(v.participant_id, v.date, centroid_distances(model, v)) for v in vectors]


def pair_assessments(
    samples: Sequence[DistanceSample],
    assessments: Iterable[AssessmentRecord],
    window_days: int = 7,
) -> list[ValidationPair]:
    """Pair each assessment with its nearest sample day within ``window_days``.

    Equidistant samples resolve to the earlier day. Assessments without a
    sample in the window are dropped (count logged).
    """
    by_pid: dict[str, list[DistanceSample]] = {}
    for s in sorted(samples, key=lambda s: (s.participant_id, s.date)):
        by_pid.setdefault(s.participant_id, []).append(s)
    ords = {pid: [s.date.toordinal() for s in ss] for pid, ss in by_pid.items()}

    pairs, dropped = [], 0
    for a in sorted(assessments, key=lambda a: (a.participant_id, a.date, a.instrument)):
        cands = by_pid.get(a.participant_id)
        if not cands:
            dropped += 1
            continue
        days = ords[a.participant_id]
        t = a.date.toordinal()
        pos = bisect.bisect_left(days, t)
        best = None
        # the earlier neighbour is checked first so it wins ties
        for j in (pos - 1, pos):
            if 0 <= j < len(days):
                gap = days[j] - t
                if abs(gap) <= window_days and (best is None or abs(gap) < abs(best[1])):
                    best = (j, gap)
        if best is None:
            dropped += 1
            continue
        s = cands[best[0]]
        pairs.append(ValidationPair(a.participant_id, s.date, a, s.distances, best[1]))
    if dropped:
        log.info("dropped %d assessments with no sample within %d days", dropped, window_days)
    return pairs


def correlate(x, y) -> tuple[float, float]:
    """Pearson r with a two-sided p value from Student's t on n - 2 df."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n != len(y):
        raise DimensionError("x and y differ in length")
    if n < 3:
        raise UndefinedScoreError("correlation needs at least 3 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise UndefinedScoreError("correlation undefined for a constant input")
    r = float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, float(np.finfo(float).tiny)
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = float(2.0 * stats.t.sf(abs(t), n - 2))
    return r, min(max(p, float(np.finfo(float).tiny)), 1.0)


def permutation_test(x, y, n_perm: int = 10000, seed=0, batch: int = 2000) -> float:
    """Two-sided permutation p value for Pearson r, shuffling ``y``.

    ``p = (1 + #{|r*| >= |r|}) / (n_perm + 1)``.
    """
    r_obs, _ = correlate(x, y)
    if n_perm <= 0:
        return 1.0
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    xc /= np.sqrt(xc @ xc)
    yc = y - y.mean()
    yc /= np.sqrt(yc @ yc)
    target = abs(float(xc @ yc)) - 1e-12
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_perm:
        b = min(batch, n_perm - done)
        perms = rng.permuted(np.broadcast_to(yc, (b, len(yc))), axis=1)
        hits += int(np.count_nonzero(np.abs(perms @ xc) >= target))
        done += b
    return (1 + hits) / (n_perm + 1)


@dataclass
class CellResult:
    state: int
    instrument: str
    r: float
    p_parametric: float
    p_permutation: float
    n_pairs: int


@dataclass
class ValidationReport:
    k: int
    cells: list[CellResult]
    ranking_scores: list[float] = field(default_factory=list)
    ordinal_labels: list[str] = field(default_factory=list)
    n_perm: int = 10000
    seed: int = 0
    window_days: int = 7
    excluded_instruments: list[str] = field(default_factory=list)
    n_assessments_paired: int = 0

    def cell(self, state: int, instrument: str) -> CellResult | None:
        for c in self.cells:
            if c.state == state and c.instrument == instrument:
                return c
        return None

    def r_matrix(self, instruments: Sequence[str] = INSTRUMENTS) -> np.ndarray:
        out = np.full((self.k, len(instruments)), np.nan)
        for c in self.cells:
            if c.instrument in instruments:
                out[c.state, list(instruments).index(c.instrument)] = c.r
        return out

    @property
    def state_order(self) -> list[int]:
        """State indices from best (label A) to worst."""
        return sorted(range(self.k), key=lambda s: self.ordinal_labels[s])

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "window_days": self.window_days,
            "n_perm": self.n_perm,
            "seed": self.seed,
            "n_assessments_paired": self.n_assessments_paired,
            "excluded_instruments": list(self.excluded_instruments),
            "cells": [
                {
                    "state": c.state,
                    "instrument": c.instrument,
                    "orientation": ORIENTATION[c.instrument],
                    "n_pairs": c.n_pairs,
                    "r": c.r,
                    "p_parametric": c.p_parametric,
                    "p_permutation": c.p_permutation,
                }
                for c in self.cells
            ],
            "ranking_scores": list(self.ranking_scores),
            "ordinal_labels": list(self.ordinal_labels),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ValidationReport":
        cells = [
            CellResult(int(c["state"]), c["instrument"], c["r"], c["p_parametric"], c["p_permutation"], int(c["n_pairs"]))
            for c in d["cells"]
        ]
        return cls(
            k=int(d["k"]),
            cells=cells,
            ranking_scores=list(d.get("ranking_scores", [])),
            ordinal_labels=list(d.get("ordinal_labels", [])),
            n_perm=int(d.get("n_perm", 0)),
            seed=int(d.get("seed", 0)),
            window_days=int(d.get("window_days", 7)),
            excluded_instruments=list(d.get("excluded_instruments", [])),
            n_assessments_paired=int(d.get("n_assessments_paired", 0)),
        )


def state_labels(k: int) -> list[str]:
    if k > 26:
        raise UndefinedScoreError("more than 26 states cannot be lettered")
    return list(string.ascii_uppercase[:k])


def ranking_scores(report: ValidationReport) -> list[float]:
    """Mean over instruments of orientation-signed r, per state.

    Higher means that drifting away from the state goes with worse outcomes,
    i.e. the state itself is a good one.
    """
    scores = []
    for s in range(report.k):
        vals = [
            (1.0 if ORIENTATION[c.instrument] == "higher_is_worse" else -1.0) * c.r
            for c in report.cells
            if c.state == s and np.isfinite(c.r)
        ]
        scores.append(float(np.mean(vals)) if vals else float("nan"))
    return scores


def rank_states(report: ValidationReport, pain: Sequence[float] | None = None) -> list[str]:
    """Letter each state A, B, ... by descending ranking score.

    Equal scores (to 12 decimals) go to the state with the lower ``pain``
    coordinate, then to the lower state index. Returns ``labels[state]``.
    """
    scores = ranking_scores(report)
    pain = list(pain) if pain is not None else [0.0] * report.k

    def key(s: int):
        sc = scores[s]
        sc = -np.inf if not np.isfinite(sc) else round(sc, 12)
        return (-sc, pain[s], s)

    order = sorted(range(report.k), key=key)
    letters = state_labels(report.k)
    labels = [""] * report.k
    for rank, s in enumerate(order):
        labels[s] = letters[rank]
    return labels


def validate_states(
    model: ClusterModel,
    pairs: Sequence[ValidationPair],
    n_perm: int = 10000,
    seed: int = 0,
    window_days: int = 7,
    min_pairs: int = 3,
    threads: int = 1,
) -> ValidationReport:
    """Correlate distance-to-each-centroid with every instrument across pooled pairs.

    Each (state, instrument) cell draws its permutations from its own child
    seed, so p values do not depend on evaluation order. Instruments with
    fewer than ``min_pairs`` pairs are excluded with a warning. The returned
    report carries ranking scores and ordinal labels.
    """
    by_inst: dict[str, list[ValidationPair]] = {}
    for p in pairs:
        by_inst.setdefault(p.assessment.instrument, []).append(p)
    instruments = [i for i in INSTRUMENTS if i in by_inst]
    excluded = [i for i in instruments if len(by_inst[i]) < min_pairs]
    for inst in excluded:
        log.warning("excluding %s: only %d pairs", inst, len(by_inst[inst]))
    instruments = [i for i in instruments if i not in excluded]

    jobs = [(s, inst) for s in range(model.k) for inst in INSTRUMENTS]
    seeds = dict(zip(jobs, np.random.SeedSequence(int(seed)).spawn(len(jobs))))
    jobs = [j for j in jobs if j[1] in instruments]

    def run(job):
        s, inst = job
        ps = by_inst[inst]
        x = np.array([p.centroid_distances[s] for p in ps])
        y = np.array([p.assessment.score for p in ps])
        try:
            r, p_par = correlate(x, y)
            p_perm = permutation_test(x, y, n_perm, seeds[job])
        except UndefinedScoreError:
            r, p_par, p_perm = float("nan"), 1.0, 1.0
        return CellResult(s, inst, r, p_par, p_perm, len(ps))

    cells = _map(run, jobs, threads)
    report = ValidationReport(
        k=model.k,
        cells=cells,
        n_perm=n_perm,
        seed=seed,
        window_days=window_days,
        excluded_instruments=excluded,
        n_assessments_paired=len(pairs),
    )
    pain = model.centroids[:, model.feature_names.index("pain")] if "pain" in model.feature_names else None
    report.ranking_scores = ranking_scores(report)
    report.ordinal_labels = rank_states(report, pain)
    return report


def ranked_model(model: ClusterModel, report: ValidationReport) -> ClusterModel:
    return ClusterModel(
        k=model.k,
        centroids=model.centroids.copy(),
        feature_names=list(model.feature_names),
        seed=model.seed,
        wcss=model.wcss,
        normalization=model.normalization,
        selection=model.selection,
        ranking=list(report.ordinal_labels),
        modality=model.modality,
        n_samples=model.n_samples,
        extra=dict(model.extra),
    )
