"""Synthetic cohorts with known latent states.

A participant's latent state follows a Markov chain (switching to a second
chain after an optional event day). Every observable stream is drawn from the
day's state: questionnaire answers around per-state means, actigraphy zone
occupancy, voice features and periodic standard assessments. The returned
ground truth is the oracle for the end-to-end tests.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError
from .features import DEFAULT_WINDOW_MINUTES, DEFAULT_ZONE_THRESHOLDS, N_ZONES
from .ingest import CATEGORIES, QuestionSpec, write_questions
from .jsonio import dumps
from .timecourse import Event, write_events
from .validation import INSTRUMENTS, ORIENTATION, AssessmentRecord, write_assessments

DEFAULT_QUESTIONS = [
    QuestionSpec("pain_overall", "pain", 0, 10, "higher_is_worse"),
    QuestionSpec("pain_leg", "pain", 0, 10, "higher_is_worse"),
    QuestionSpec("pain_back", "pain", 0, 10, "higher_is_worse"),
    QuestionSpec("mood", "mood", 0, 10, "higher_is_better"),
    QuestionSpec("sleep_hours", "sleep", 0, 12, "higher_is_better"),
    QuestionSpec("sleep_quality", "sleep", 0, 10, "higher_is_better"),
    QuestionSpec("alertness", "alertness", 0, 10, "higher_is_better"),
    QuestionSpec("med_opioid", "medication", 0, 10, "higher_is_worse"),
    QuestionSpec("med_otc", "medication", 0, 10, "higher_is_worse"),
    QuestionSpec("med_nonopioid", "medication", 0, 10, "higher_is_worse"),
    QuestionSpec("activities_daily_life", "activity_adl", 0, 10, "higher_is_better"),
    QuestionSpec("pain_interference", "activity_interference", 0, 10, "higher_is_worse"),
]

STATE_FEATURES = list(CATEGORIES) + ["effective_mobility"]

# Per-state means in normalized units, best state first. B and C share their
# questionnaire profile up to a small pain step and are told apart by
# mobility and voice.
STATE_LIBRARY = {
    #      pain  mood  sleep alert  med   adl  interf  mobility
    "A": [0.15, 0.80, 0.75, 0.80, 0.10, 0.75, 0.15, 0.65],
    "B": [0.35, 0.65, 0.60, 0.65, 0.30, 0.60, 0.30, 0.50],
    "C": [0.40, 0.65, 0.60, 0.65, 0.30, 0.60, 0.30, 0.30],
    "D": [0.75, 0.50, 0.50, 0.55, 0.60, 0.40, 0.60, 0.25],
    "E": [0.75, 0.25, 0.30, 0.35, 0.75, 0.20, 0.80, 0.10],
    "M": [0.45, 0.70, 0.65, 0.70, 0.40, 0.55, 0.40, 0.40],
}
PRESETS = {1: "M", 2: "AE", 3: "AME", 4: "ABDE", 5: "ABCDE"}

INSTRUMENT_RANGE = {
    "ODI": (0.0, 100.0),
    "EQ5D_PAIN": (1.0, 5.0),
    "EQ5D_ACTIVITIES": (1.0, 5.0),
    "EQ5D_VAS_HEALTH": (0.0, 100.0),
}

WAKING_HOURS = (8, 20)


def chain(n: int, stay: float, preference: Sequence[float]) -> list[list[float]]:
    """Row-stochastic matrix: remain with ``stay``, otherwise jump in proportion to ``preference``."""
    pref = np.asarray(preference, dtype=float)
    P = np.zeros((n, n))
    for i in range(n):
        if n == 1:
            P[i, i] = 1.0
            continue
        w = pref.copy()
        w[i] = 0.0
        P[i] = (1.0 - stay) * w / w.sum()
        P[i, i] = stay
    return P.tolist()


def stationary(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    vals, vecs = np.linalg.eig(P.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


@dataclass
class CohortSpec:
    n_participants: int = 120
    days_per_participant: int = 100
    n_states: int = 5
    state_names: list[str] = field(default_factory=lambda: list(PRESETS[5]))
    feature_names: list[str] = field(default_factory=lambda: list(STATE_FEATURES))
    state_feature_means: list[list[float]] = field(default_factory=lambda: [STATE_LIBRARY[s] for s in PRESETS[5]])
    state_quality: list[float] | None = None
    noise_sd: float = 0.5
    noise_distribution: str = "gaussian"
    transition_matrix: list[list[float]] = field(default_factory=lambda: chain(5, 0.7, [1.0, 1.0, 1.5, 2.0, 2.0]))
    response_rate_distribution: dict = field(
        default_factory=lambda: {"base_extra": 0.1, "high_fraction": 0.05, "high_extra": 3.0}
    )
    missingness_rate: float = 0.02
    watch_missing_rate: float = 0.05
    watch_dropout_fraction: float = 0.03
    voice_interval_days: int = 7
    n_voice_features: int = 24
    voice_signal: float = 3.0
    voice_nuisance_sd: float = 0.1
    voice_noise_sd: float = 0.15
    assessment_schedule: int = 14
    assessment_noise_sd: float = 0.05
    assessment_recall_days: int = 7
    event_day: int | None = 50
    event_type: str = "scs_implant"
    post_event_transition_matrix: list[list[float]] | None = field(
        default_factory=lambda: chain(5, 0.7, [3.0, 2.0, 1.5, 1.0, 0.5])
    )
    pre_event_shifts: list[dict] = field(default_factory=list)
    start_date: str = "2020-01-06"
    stagger_days: int = 60
    zone_thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_ZONE_THRESHOLDS))
    window_minutes: int = DEFAULT_WINDOW_MINUTES
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def quality(self) -> np.ndarray:
        if self.state_quality is not None:
            return np.asarray(self.state_quality, dtype=float)
        if self.n_states == 1:
            return np.array([1.0])
        return np.linspace(1.0, 0.0, self.n_states)

    @property
    def quality_order(self) -> list[int]:
        """State indices from best to worst."""
        return [int(i) for i in np.argsort(-self.quality, kind="stable")]

    def means(self) -> np.ndarray:
        return np.asarray(self.state_feature_means, dtype=float)

    def validate(self) -> None:
        n = self.n_states
        if self.n_participants < 1 or self.days_per_participant < 1 or n < 1:
            raise ConfigError("participants, days and states must be >= 1", field="n_participants")
        M = self.means()
        if M.shape != (n, len(self.feature_names)):
            raise ConfigError(f"expected shape ({n}, {len(self.feature_names)})", field="state_feature_means")
        missing = [c for c in STATE_FEATURES if c not in self.feature_names]
        if missing:
            raise ConfigError(f"missing columns {missing}", field="feature_names")
        if len(self.quality) != n or len(set(self.quality.tolist())) != n:
            raise ConfigError("need one distinct quality per state", field="state_quality")
        if self.noise_sd < 0:
            raise ConfigError("must be >= 0", field="noise_sd")
        if self.noise_distribution not in ("gaussian", "student_t"):
            raise ConfigError("gaussian or student_t", field="noise_distribution")
        if not 0.0 <= self.missingness_rate < 1.0:
            raise ConfigError("must lie in [0, 1)", field="missingness_rate")
        for name in ("transition_matrix", "post_event_transition_matrix"):
            P = getattr(self, name)
            if P is None:
                continue
            P = np.asarray(P, dtype=float)
            if P.shape != (n, n) or np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
                raise ConfigError("must be a row-stochastic n_states x n_states matrix", field=name)
        if self.assessment_schedule < 1:
            raise ConfigError("must be >= 1 day", field="assessment_schedule")
        mob = M[:, self.feature_names.index("effective_mobility")]
        if np.any(mob < 0) or np.any(mob > 1):
            raise ConfigError("effective mobility means must lie in [0, 1]", field="state_feature_means")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CohortSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown fields {sorted(unknown)}", field=sorted(unknown)[0])
        data = dict(data)
        n = int(data.get("n_states", 5))
        if "state_feature_means" not in data:
            if n not in PRESETS:
                raise ConfigError(f"no preset for {n} states", field="state_feature_means")
            names = data.get("state_names") or list(PRESETS[n])
            data["state_names"] = names
            data["state_feature_means"] = [STATE_LIBRARY[s] for s in names]
        elif "state_names" not in data:
            data["state_names"] = [f"S{i + 1}" for i in range(n)]
        if "transition_matrix" not in data:
            data["transition_matrix"] = chain(n, 0.7, np.linspace(1.0, 2.0, n))
        if "post_event_transition_matrix" not in data and n != 5:
            data["post_event_transition_matrix"] = chain(n, 0.7, np.linspace(3.0, 0.5, n))
        return cls(**data)


def check_feasible(spec: CohortSpec, questions: Sequence[QuestionSpec]) -> None:
    """Reject state means that clipped noise could not produce.

    A mean may sit outside a question's scale by at most three noise SDs,
    measured in that question's normalized units.
    """
    M = spec.means()
    for q in questions:
        sd = spec.noise_sd / (q.scale_max - q.scale_min)
        m = M[:, spec.feature_names.index(q.category)]
        if np.any(m < -3 * sd) or np.any(m > 1 + 3 * sd):
            raise ConfigError(
                f"{q.category} mean lies outside the {q.question_id} scale by more than 3 SD",
                field="state_feature_means",
            )


def preset_spec(n_states: int = 5, **overrides) -> CohortSpec:
    """Default spec for 1-5 states built from the state library."""
    return CohortSpec.from_dict({"n_states": n_states, **overrides})


@dataclass
class GroundTruth:
    states: dict[tuple[str, dt.date], int]
    quality: list[float]
    quality_order: list[int]
    state_names: list[str]
    event_dates: dict[str, dt.date]
    start_dates: dict[str, dt.date]
    spec: dict

    def labels_for(self, keys) -> np.ndarray:
        return np.array([self.states[k] for k in keys])

    def to_dict(self) -> dict:
        return {
            "quality": list(self.quality),
            "quality_order": list(self.quality_order),
            "state_names": list(self.state_names),
            "spec": self.spec,
        }


@dataclass
class SyntheticCohort:
    spec: CohortSpec
    questions: list[QuestionSpec]
    records: list[tuple[str, dt.date, str, float]]
    demographics: dict[str, tuple[float, float]]
    actigraphy: pd.DataFrame
    voice_keys: list[tuple[str, dt.date]]
    voice_names: list[str]
    voice: np.ndarray
    events: list[Event]
    ground_truth: GroundTruth
    assessments: list[AssessmentRecord] = field(default_factory=list)

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["participant_id", "date", "question_id", "value"])
        for pid, day, qid, value in self.records:
            w.writerow([pid, day.isoformat(), qid, repr(value)])
        return buf.getvalue()

    def voice_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["participant_id", "date", *self.voice_names])
        for (pid, day), row in zip(self.voice_keys, self.voice):
            w.writerow([pid, day.isoformat(), *(repr(float(x)) for x in row)])
        return buf.getvalue()

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}

        def put(name: str, text: str):
            path = out / name
            path.write_text(text, encoding="utf-8")
            paths[name] = path

        put("records.csv", self.records_csv())
        buf = io.StringIO()
        write_questions(buf, self.questions)
        put("questions.csv", buf.getvalue())
        put(
            "demographics.csv",
            "participant_id,age,sex\n"
            + "".join(f"{pid},{repr(a)},{int(s)}\n" for pid, (a, s) in sorted(self.demographics.items())),
        )
        put(
            "actigraphy.csv",
            self.actigraphy.to_csv(
                index=False, lineterminator="\n", float_format="%.4f", date_format="%Y-%m-%dT%H:%M:%S"
            ),
        )
        put("voice.csv", self.voice_csv())
        buf = io.StringIO()
        write_events(buf, self.events)
        put("events.csv", buf.getvalue())
        buf = io.StringIO()
        write_assessments(buf, self.assessments)
        put("assessments.csv", buf.getvalue())
        gt = self.ground_truth
        put(
            "ground_truth.csv",
            "participant_id,date,state,quality\n"
            + "".join(
                f"{pid},{day.isoformat()},{s},{repr(float(gt.quality[s]))}\n"
                for (pid, day), s in sorted(gt.states.items())
            ),
        )
        put("ground_truth.json", dumps(gt.to_dict()) + "\n")
        return paths


def _streams(spec: CohortSpec) -> list[list[np.random.SeedSequence]]:
    """Per participant: [chain+questions, actigraphy, voice, assessments] seed streams."""
    return [child.spawn(4) for child in np.random.SeedSequence(int(spec.seed)).spawn(spec.n_participants)]


def _simulate_chain(spec: CohortSpec, rng: np.random.Generator) -> np.ndarray:
    P = np.asarray(spec.transition_matrix, dtype=float)
    Q = None if spec.post_event_transition_matrix is None else np.asarray(spec.post_event_transition_matrix)
    cum_p, cum_q = np.cumsum(P, axis=1), None if Q is None else np.cumsum(Q, axis=1)
    days = spec.days_per_participant
    out = np.empty(days, dtype=int)
    out[0] = min(int(np.searchsorted(np.cumsum(stationary(P)), rng.random(), side="right")), spec.n_states - 1)
    u = rng.random(days)
    for t in range(1, days):
        post = spec.event_day is not None and cum_q is not None and t > spec.event_day
        cum = cum_q if post else cum_p
        out[t] = min(int(np.searchsorted(cum[out[t - 1]], u[t], side="right")), spec.n_states - 1)
    return out


def _noise(spec: CohortSpec, rng: np.random.Generator, size) -> np.ndarray:
    if spec.noise_sd == 0:
        return np.zeros(size)
    if spec.noise_distribution == "student_t":
        # scaled to unit variance (df = 3)
        return spec.noise_sd * rng.standard_t(3, size) / np.sqrt(3.0)
    return spec.noise_sd * rng.standard_normal(size)


def generate_cohort(spec: CohortSpec, questions: Sequence[QuestionSpec] = DEFAULT_QUESTIONS) -> SyntheticCohort:
    """Draw a full cohort; identical specs give identical cohorts.

    Assessments are included (see :func:`generate_assessments`).
    """
    spec.validate()
    questions = list(questions)
    check_feasible(spec, questions)
    M = spec.means()
    col = {c: spec.feature_names.index(c) for c in spec.feature_names}
    quality = spec.quality
    q_order = spec.quality_order
    # quality rescaled to [0, 1] for voice and assessment generation
    span = quality.max() - quality.min()
    q01 = (quality - quality.min()) / span if span > 0 else np.ones_like(quality)

    start = dt.date.fromisoformat(spec.start_date)
    width = len(str(spec.n_participants))
    pids = [f"P{i + 1:0{max(width, 3)}d}" for i in range(spec.n_participants)]

    rates = spec.response_rate_distribution
    th = np.asarray(spec.zone_thresholds, dtype=float)
    zone_lo = np.concatenate([[0.0], th])
    zone_hi = np.concatenate([th, [th[-1] * 1.5]])
    per_day = (WAKING_HOURS[1] - WAKING_HOURS[0]) * 60 // spec.window_minutes

    vrng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 99]))
    nv = spec.n_voice_features
    v_quality = vrng.normal(0.0, 1.0, nv)
    v_quality /= np.linalg.norm(v_quality) / np.sqrt(nv)
    v_nuisance = vrng.normal(0.0, spec.voice_nuisance_sd, (2, nv))
    v_age = vrng.normal(0.0, 0.04, nv)
    v_sex = vrng.normal(0.0, 0.8, nv)
    v_names = [f"voice_feature_{i + 1:02d}" for i in range(nv)]

    shifts = np.zeros_like(M)
    for sh in spec.pre_event_shifts:
        shifts[int(sh["state"]), col[sh["category"]]] += float(sh["delta"])

    q_cols = [col[q.category] for q in questions]
    q_ids = [q.question_id for q in questions]
    q_lo = np.array([q.scale_min for q in questions], dtype=float)
    q_span = np.array([q.scale_max - q.scale_min for q in questions], dtype=float)
    records: list[tuple[str, dt.date, str, float]] = []
    demographics: dict[str, tuple[float, float]] = {}
    acti_parts = []
    voice_keys, voice_rows = [], []
    events, gt_states, event_dates, start_dates = [], {}, {}, {}

    for pid, streams in zip(pids, _streams(spec)):
        rng = np.random.default_rng(streams[0])
        age = float(np.clip(np.round(rng.normal(59.4, 10.0), 1), 18.0, 90.0))
        sex = float(rng.random() < 0.405)
        demographics[pid] = (age, sex)
        offset = int(rng.integers(0, spec.stagger_days + 1)) if spec.stagger_days > 0 else 0
        p_start = start + dt.timedelta(days=offset)
        start_dates[pid] = p_start
        high = rng.random() < rates.get("high_fraction", 0.0)
        extra = rates.get("high_extra", 0.0) if high else rates.get("base_extra", 0.0)
        states = _simulate_chain(spec, rng)
        days = [p_start + dt.timedelta(days=t) for t in range(spec.days_per_participant)]
        if spec.event_day is not None and spec.event_day < spec.days_per_participant:
            event_dates[pid] = days[spec.event_day]
            events.append(Event(pid, days[spec.event_day], spec.event_type))

        for t, (day, s) in enumerate(zip(days, states)):
            gt_states[(pid, day)] = int(s)
        # one row per submission, one column per question
        n_resp = 1 + rng.poisson(extra, len(days))
        row_day = np.repeat(np.arange(len(days)), n_resp)
        row_mean = M[states[row_day]][:, q_cols]
        if spec.event_day is not None:
            pre = row_day < spec.event_day
            row_mean[pre] += shifts[states[row_day[pre]]][:, q_cols]
        raw = q_lo + q_span * row_mean + _noise(spec, rng, row_mean.shape)
        raw = np.clip(raw, q_lo, q_lo + q_span)
        present = rng.random(raw.shape) >= spec.missingness_rate
        for r, j in zip(*np.nonzero(present)):
            records.append((pid, days[row_day[r]], q_ids[j], float(raw[r, j])))

        # actigraphy
        arng = np.random.default_rng(streams[1])
        if arng.random() >= spec.watch_dropout_fraction:
            worn = arng.random(len(days)) >= spec.watch_missing_rate
            worn_days = [t for t in range(len(days)) if worn[t]]
            if worn_days:
                p_em = M[states[worn_days], col["effective_mobility"]]
                zones = arng.binomial(N_ZONES - 1, np.repeat(p_em, per_day))
                rate = zone_lo[zones] + arng.random(len(zones)) * (zone_hi[zones] - zone_lo[zones])
                base = np.array([np.datetime64(days[t]) for t in worn_days], dtype="datetime64[m]")
                minute = np.arange(per_day) * spec.window_minutes + WAKING_HOURS[0] * 60
                stamps = (base[:, None] + minute[None, :].astype("timedelta64[m]")).ravel()
                acti_parts.append(
                    pd.DataFrame({"participant_id": pid, "timestamp": stamps, "activity_rate": rate})
                )

        # voice
        vr = np.random.default_rng(streams[2])
        first = int(vr.integers(0, spec.voice_interval_days))
        for t in range(first, len(days), spec.voice_interval_days):
            nuisance = vr.normal(0.0, 1.0, 2)
            x = (
                spec.voice_signal * q01[states[t]] * v_quality
                + nuisance @ v_nuisance
                + (age - 59.4) * v_age
                + sex * v_sex
                + vr.normal(0.0, spec.voice_noise_sd, nv)
            )
            voice_keys.append((pid, days[t]))
            voice_rows.append(x)

    acti = (
        pd.concat(acti_parts, ignore_index=True)
        if acti_parts
        else pd.DataFrame({"participant_id": [], "timestamp": [], "activity_rate": []})
    )

    gt = GroundTruth(
        states=gt_states,
        quality=quality.tolist(),
        quality_order=q_order,
        state_names=list(spec.state_names),
        event_dates=event_dates,
        start_dates=start_dates,
        spec=spec.to_dict(),
    )
    cohort = SyntheticCohort(
        spec=spec,
        questions=questions,
        records=records,
        demographics=demographics,
        actigraphy=acti,
        voice_keys=voice_keys,
        voice_names=v_names,
        voice=np.array(voice_rows).reshape(len(voice_rows), nv),
        events=events,
        ground_truth=gt,
    )
    cohort.assessments = generate_assessments(gt, spec)
    return cohort


def generate_assessments(ground_truth: GroundTruth, spec: CohortSpec) -> list[AssessmentRecord]:
    """Standard instruments on a fixed schedule, driven by recent state quality.

    Each score is a linear map of the mean quality (rescaled to [0, 1]) over
    the ``assessment_recall_days`` ending on the assessment day, plus noise,
    clipped to the instrument range. Higher-is-worse instruments fall as
    quality rises; VAS health rises.
    """
    quality = np.asarray(ground_truth.quality, dtype=float)
    span = quality.max() - quality.min()
    q01 = (quality - quality.min()) / span if span > 0 else np.ones_like(quality)
    out = []
    streams = _streams(spec)
    for i, pid in enumerate(sorted(ground_truth.start_dates)):
        rng = np.random.default_rng(streams[i][3])
        p_start = ground_truth.start_dates[pid]
        first = int(rng.integers(0, spec.assessment_schedule))
        for t in range(first, spec.days_per_participant, spec.assessment_schedule):
            day = p_start + dt.timedelta(days=t)
            window = [
                q01[ground_truth.states[(pid, p_start + dt.timedelta(days=u))]]
                for u in range(max(0, t - spec.assessment_recall_days + 1), t + 1)
            ]
            qbar = float(np.mean(window))
            for inst in INSTRUMENTS:
                lo, hi = INSTRUMENT_RANGE[inst]
                level = qbar if ORIENTATION[inst] == "higher_is_better" else 1.0 - qbar
                level += rng.normal(0.0, spec.assessment_noise_sd) if spec.assessment_noise_sd > 0 else 0.0
                score = lo + (hi - lo) * float(np.clip(level, 0.0, 1.0))
                out.append(AssessmentRecord(pid, day, inst, round(score, 6)))
    return out
