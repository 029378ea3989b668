"""Per-day state assignment and event-anchored dwell-time contrasts."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .clustering import ClusterModel
from .errors import ConfigError, DimensionError, ParseError, SchemaError

log = logging.getLogger(__name__)

EVENTS_HEADER = ["participant_id", "date", "event_type"]


@dataclass
class TimecourseEntry:
    date: dt.date
    label: str
    state: int
    distances: np.ndarray


@dataclass
class StateTimecourse:
    participant_id: str
    entries: list[TimecourseEntry] = field(default_factory=list)

    @property
    def dates(self) -> list[dt.date]:
        return [e.date for e in self.entries]

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]


@dataclass
class DwellContrast:
    participant_id: str
    event_date: dt.date
    pre_days: int
    post_days: int
    labels: list[str]
    pre_fractions: np.ndarray
    post_fractions: np.ndarray
    n_pre: int
    n_post: int

    @property
    def empty(self) -> bool:
        return self.n_pre == 0 or self.n_post == 0

    @property
    def delta(self) -> np.ndarray:
        return self.post_fractions - self.pre_fractions


def assign_states(model: ClusterModel, vectors: Iterable) -> list[StateTimecourse]:
    """Label every day with its nearest centroid.

    Equidistant centroids resolve to the better-ranked state. Days with a
    missing (NaN) model feature are skipped. Output is one timecourse per
    participant, sorted by participant then date.
    """
    if not model.ranking:
        raise ConfigError("model has no ordinal ranking; run validation first", field="ranking")
    names = model.feature_names
    # centroid indices in label order (A first), so argmin ties favour better states
    order = sorted(range(model.k), key=lambda s: model.ranking[s])
    by_pid: dict[str, dict[dt.date, TimecourseEntry]] = {}
    skipped = 0
    for v in vectors:
        try:
            x = np.array([v.values[n] for n in names], dtype=float)
        except KeyError as exc:
            raise DimensionError(f"feature vector lacks {exc.args[0]!r}") from None
        if not np.isfinite(x).all():
            skipped += 1
            continue
        d = np.sqrt(((model.centroids - x) ** 2).sum(axis=1))
        s = order[int(np.argmin(d[order]))]
        by_pid.setdefault(v.participant_id, {})[v.date] = TimecourseEntry(v.date, model.ranking[s], s, d)
    if skipped:
        log.info("skipped %d days with missing feature values", skipped)
    return [
        StateTimecourse(pid, [days[d] for d in sorted(days)])
        for pid, days in sorted(by_pid.items())
    ]


def _fractions(labels: Sequence[str], alphabet: Sequence[str]) -> np.ndarray:
    if not labels:
        return np.full(len(alphabet), np.nan)
    counts = np.array([labels.count(a) for a in alphabet], dtype=float)
    return counts / counts.sum()


def dwell_contrast(
    timecourse: StateTimecourse,
    event_date: dt.date,
    pre_days: int = 30,
    post_days: int = 30,
    labels: Sequence[str] | None = None,
) -> DwellContrast:
    """Share of assigned days per state in ``[event - pre, event)`` and ``(event, event + post]``.

    The event day itself belongs to neither window. An empty window gives NaN
    fractions and ``empty`` is set.
    """
    if pre_days < 1 or post_days < 1:
        raise ConfigError("pre/post windows must be >= 1 day", field="dwell_window")
    alphabet = list(labels) if labels is not None else sorted(set(timecourse.labels))
    pre, post = [], []
    for e in timecourse.entries:
        off = (e.date - event_date).days
        if -pre_days <= off < 0:
            pre.append(e.label)
        elif 0 < off <= post_days:
            post.append(e.label)
    return DwellContrast(
        timecourse.participant_id,
        event_date,
        pre_days,
        post_days,
        alphabet,
        _fractions(pre, alphabet),
        _fractions(post, alphabet),
        len(pre),
        len(post),
    )


# --------------------------------------------------------------------------
# events and assignments files


@dataclass(frozen=True)
class Event:
    participant_id: str
    date: dt.date
    event_type: str


def read_events(stream: TextIO) -> list[Event]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != EVENTS_HEADER:
        raise SchemaError("events.csv: expected " + ",".join(EVENTS_HEADER), line=1)
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            pid, day, kind = (c.strip() for c in row)
            out.append(Event(pid, dt.date.fromisoformat(day), kind))
        except ValueError as exc:
            raise ParseError(f"malformed event row: {exc}", line=lineno) from exc
    return out


def write_events(stream: TextIO, events: Iterable[Event]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EVENTS_HEADER)
    for e in events:
        writer.writerow([e.participant_id, e.date.isoformat(), e.event_type])


def event_dates(events: Iterable[Event], event_type: str) -> dict[str, dt.date]:
    """First event of ``event_type`` per participant."""
    out: dict[str, dt.date] = {}
    for e in sorted(events, key=lambda e: (e.participant_id, e.date)):
        if e.event_type == event_type:
            out.setdefault(e.participant_id, e.date)
    return out


def event_date_for(events: Mapping[str, dt.date], participant_id: str) -> dt.date:
    try:
        return events[participant_id]
    except KeyError:
        raise LookupError(f"no event date configured for participant {participant_id!r}") from None


def write_assignments(stream: TextIO, timecourses: Iterable[StateTimecourse], k: int) -> None:
    """``participant_id,date,state_label,dist_1..dist_k`` with distances in model centroid order."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["participant_id", "date", "state_label", *(f"dist_{i + 1}" for i in range(k))])
    for tc in timecourses:
        for e in tc.entries:
            writer.writerow([tc.participant_id, e.date.isoformat(), e.label, *(repr(float(d)) for d in e.distances)])


def read_assignments(stream: TextIO, ranking: Sequence[str]) -> list[StateTimecourse]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or header[:3] != ["participant_id", "date", "state_label"]:
        raise SchemaError("assignments.csv: unexpected header", line=1)
    index = {lab: i for i, lab in enumerate(ranking)}
    by_pid: dict[str, StateTimecourse] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            pid, day, lab = row[:3]
            dists = np.array([float(x) for x in row[3:]])
            entry = TimecourseEntry(dt.date.fromisoformat(day), lab, index[lab], dists)
        except (ValueError, KeyError) as exc:
            raise ParseError(f"malformed assignment row: {exc}", line=lineno) from exc
        by_pid.setdefault(pid, StateTimecourse(pid)).entries.append(entry)
    return [by_pid[p] for p in sorted(by_pid)]
