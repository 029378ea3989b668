"""Parsing, same-day aggregation and completeness filtering of questionnaire streams."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

from .errors import ConfigError, ParseError, RangeError, SchemaError

log = logging.getLogger(__name__)

CATEGORIES = (
    "pain",
    "mood",
    "sleep",
    "alertness",
    "medication",
    "activity_adl",
    "activity_interference",
)
POLARITIES = ("higher_is_better", "higher_is_worse")

RECORDS_HEADER = ["participant_id", "date", "question_id", "value"]
QUESTIONS_HEADER = ["question_id", "category", "scale_min", "scale_max", "polarity"]
DEMOGRAPHICS_HEADER = ["participant_id", "age", "sex"]


@dataclass(frozen=True)
class QuestionSpec:
    question_id: str
    category: str
    scale_min: float
    scale_max: float
    polarity: str = "higher_is_worse"

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SchemaError(f"unknown category {self.category!r} for {self.question_id}")
        if self.polarity not in POLARITIES:
            raise SchemaError(f"unknown polarity {self.polarity!r} for {self.question_id}")
        if not self.scale_min < self.scale_max:
            raise SchemaError(f"scale_min must be < scale_max for {self.question_id}")


@dataclass
class DailyRecord:
    """One participant-day.

    Straight out of :func:`parse_daily_records` every response is a list of the
    raw same-day values; after :func:`aggregate_daily` each is a single float.
    """

    participant_id: str
    date: dt.date
    responses: dict = field(default_factory=dict)
    n_responses: int = 1

    def __post_init__(self):
        if not self.participant_id:
            raise ParseError("empty participant_id")


@dataclass
class CohortTable:
    records: list[DailyRecord]
    question_registry: list[QuestionSpec]
    participants: tuple[str, ...]

    def by_participant(self) -> dict[str, list[DailyRecord]]:
        out: dict[str, list[DailyRecord]] = defaultdict(list)
        for rec in self.records:
            out[rec.participant_id].append(rec)
        return dict(out)


def parse_day(text: str, day_start_hour: int = 0) -> dt.date:
    """Map an ISO date or datetime to its calendar day.

    Timestamps earlier than ``day_start_hour`` belong to the previous day, which
    lets late-night answers count toward the evening they describe.
    """
    text = text.strip()
    if len(text) == 10:
        return dt.date.fromisoformat(text)
    stamp = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    if stamp.hour < day_start_hour:
        stamp -= dt.timedelta(days=1)
    return stamp.date()


def _check_header(header: list[str] | None, expected: list[str], what: str) -> None:
    if header is None:
        raise SchemaError(f"{what}: missing header", line=1)
    if [h.strip() for h in header[: len(expected)]] != expected:
        raise SchemaError(f"{what}: expected header {','.join(expected)}", line=1)


def load_questions(stream: TextIO) -> list[QuestionSpec]:
    reader = csv.reader(stream)
    _check_header(next(reader, None), QUESTIONS_HEADER, "questions.csv")
    registry = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(QUESTIONS_HEADER):
            raise ParseError(f"expected {len(QUESTIONS_HEADER)} fields, got {len(row)}", line=lineno)
        qid, category, lo, hi, polarity = (c.strip() for c in row)
        if qid in seen:
            raise SchemaError(f"duplicate question_id {qid!r}", line=lineno)
        seen.add(qid)
        try:
            registry.append(QuestionSpec(qid, category, float(lo), float(hi), polarity))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
    return registry


def write_questions(stream: TextIO, registry: Iterable[QuestionSpec]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(QUESTIONS_HEADER)
    for q in registry:
        writer.writerow([q.question_id, q.category, q.scale_min, q.scale_max, q.polarity])


def load_demographics(stream: TextIO) -> dict[str, tuple[float, float]]:
    """Read ``participant_id,age,sex`` into ``{pid: (age, sex)}``."""
    reader = csv.reader(stream)
    _check_header(next(reader, None), DEMOGRAPHICS_HEADER, "demographics.csv")
    out = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            pid, age, sex = row
            out[pid.strip()] = (float(age), float(sex))
        except ValueError as exc:
            raise ParseError(f"malformed demographics row: {exc}", line=lineno) from exc
    return out


def parse_daily_records(
    stream: TextIO,
    question_registry: Iterable[QuestionSpec],
    day_start_hour: int = 0,
) -> list[DailyRecord]:
    """Parse ``records.csv`` into one record per (participant, date).

    Values are kept as lists in file order, pending :func:`aggregate_daily`.
    Raises ParseError (malformed row), RangeError (value outside the
    question's scale) or SchemaError (unknown question id), each carrying the
    1-based line number.
    """
    registry = {q.question_id: q for q in question_registry}
    if not registry:
        raise ConfigError("question registry is empty", field="question_registry")
    reader = csv.reader(stream)
    _check_header(next(reader, None), RECORDS_HEADER, "records.csv")

    grouped: dict[tuple[str, dt.date], dict[str, list[float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno)
        pid, date_text, qid, value_text = (c.strip() for c in row)
        if not pid:
            raise ParseError("empty participant_id", line=lineno)
        try:
            day = parse_day(date_text, day_start_hour)
        except ValueError as exc:
            raise ParseError(f"bad date {date_text!r}", line=lineno) from exc
        try:
            value = float(value_text)
        except ValueError as exc:
            raise ParseError(f"non-numeric value {value_text!r}", line=lineno) from exc
        if not math.isfinite(value):
            raise ParseError(f"non-finite value {value_text!r}", line=lineno)
        spec = registry.get(qid)
        if spec is None:
            raise SchemaError(f"unknown question_id {qid!r}", line=lineno)
        if not spec.scale_min <= value <= spec.scale_max:
            raise RangeError(
                f"{qid}={value} outside [{spec.scale_min}, {spec.scale_max}]", line=lineno
            )
        grouped.setdefault((pid, day), {}).setdefault(qid, []).append(value)

    records = []
    for (pid, day) in sorted(grouped):
        responses = grouped[(pid, day)]
        n = max(len(v) for v in responses.values())
        records.append(DailyRecord(pid, day, responses, n))
    return records


def aggregate_daily(records: Iterable[DailyRecord]) -> list[DailyRecord]:
    out = []
    for rec in records:
        means = {}
        for qid, values in rec.responses.items():
            if isinstance(values, (int, float)):
                means[qid] = float(values)
            else:
                # fsum is exactly rounded, so the mean ignores row order
                means[qid] = math.fsum(values) / len(values)
        out.append(DailyRecord(rec.participant_id, rec.date, means, rec.n_responses))
    return out


def response_rates(records: Iterable[DailyRecord]) -> dict[str, float]:
    """Mean submissions per answered day, per participant."""
    counts: dict[str, list[int]] = defaultdict(list)
    for rec in records:
        counts[rec.participant_id].append(rec.n_responses)
    return {pid: sum(c) / len(c) for pid, c in sorted(counts.items())}


def filter_complete(
    records: Iterable[DailyRecord],
    question_registry: Iterable[QuestionSpec],
    min_days: int = 10,
    require_watch: bool = False,
    min_watch_days: int = 10,
    watch_days: Mapping[str, int] | None = None,
) -> CohortTable:
    """Apply the inclusion rules in order.

    1. drop every day missing any registry question;
    2. drop participants with fewer than ``min_days`` surviving days;
    3. with ``require_watch``, drop participants with fewer than
       ``min_watch_days`` days of actigraphy (``watch_days``).
    """
    registry = list(question_registry)
    if min_days < 1:
        raise ConfigError("must be >= 1", field="min_days")
    needed = {q.question_id for q in registry}

    complete = [r for r in records if needed.issubset(r.responses)]
    per_participant: dict[str, list[DailyRecord]] = defaultdict(list)
    for rec in complete:
        per_participant[rec.participant_id].append(rec)

    keep = {pid for pid, recs in per_participant.items() if len(recs) >= min_days}
    if require_watch:
        watch_days = watch_days or {}
        keep = {pid for pid in keep if watch_days.get(pid, 0) >= min_watch_days}

    kept = sorted(
        (r for r in complete if r.participant_id in keep),
        key=lambda r: (r.participant_id, r.date),
    )
    kept = [
        DailyRecord(r.participant_id, r.date, {q: r.responses[q] for q in sorted(needed)}, r.n_responses)
        for r in kept
    ]
    if not kept:
        log.warning("completeness filtering removed every participant")
    return CohortTable(kept, registry, tuple(sorted(keep)))


def write_cohort(stream: TextIO, table: CohortTable) -> None:
    """Write aggregated complete days in the ``records.csv`` layout plus a count column."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(RECORDS_HEADER + ["n_responses"])
    for rec in table.records:
        for qid in sorted(rec.responses):
            writer.writerow([rec.participant_id, rec.date.isoformat(), qid, repr(rec.responses[qid]), rec.n_responses])


def read_cohort(stream: TextIO, question_registry: list[QuestionSpec]) -> CohortTable:
    reader = csv.reader(stream)
    _check_header(next(reader, None), RECORDS_HEADER + ["n_responses"], "cohort.csv")
    grouped: dict[tuple[str, dt.date], DailyRecord] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            pid, day, qid, value, n = row
            key = (pid, dt.date.fromisoformat(day))
            rec = grouped.setdefault(key, DailyRecord(pid, key[1], {}, int(n)))
            rec.responses[qid] = float(value)
        except ValueError as exc:
            raise ParseError(f"malformed cohort row: {exc}", line=lineno) from exc
    records = [grouped[k] for k in sorted(grouped)]
    return CohortTable(records, question_registry, tuple(sorted({r.participant_id for r in records})))
