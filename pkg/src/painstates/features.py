"""Feature construction: normalization, composites, actigraphy zones and voice PCA."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
import pandas as pd

from .errors import (
    CompletenessError,
    ConfigError,
    DegenerateScaleError,
    InsufficientDataError,
    ParseError,
    SchemaError,
)
from .ingest import CohortTable, QuestionSpec, parse_day

log = logging.getLogger(__name__)

QUESTIONNAIRE_FEATURES = ("pain", "mood", "sleep", "alertness", "medication", "activity")
MOBILITY_FEATURE = "effective_mobility"
N_ZONES = 5
DEFAULT_ZONE_THRESHOLDS = (2.0, 8.0, 20.0, 40.0)
DEFAULT_WINDOW_MINUTES = 10


# --------------------------------------------------------------------------
# normalization


@dataclass
class NormalizationParams:
    """Per-question affine map ``(x - offset) / scale``."""

    method: str
    offset: dict[str, float]
    scale: dict[str, float]

    def apply(self, responses: Mapping[str, float]) -> dict[str, float]:
        return {q: (v - self.offset[q]) / self.scale[q] for q, v in responses.items()}

    def invert(self, normalized: Mapping[str, float]) -> dict[str, float]:
        return {q: v * self.scale[q] + self.offset[q] for q, v in normalized.items()}

    def to_dict(self) -> dict:
        qs = sorted(self.offset)
        return {
            "method": self.method,
            "offset": {q: self.offset[q] for q in qs},
            "scale": {q: self.scale[q] for q in qs},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "NormalizationParams":
        return cls(data["method"], dict(data["offset"]), dict(data["scale"]))


def fit_normalization(table: CohortTable, method: str = "scale_bounds_minmax") -> NormalizationParams:
    """Fit per-question normalization.

    ``scale_bounds_minmax`` uses the declared scale bounds and ignores the
    data; ``zscore`` uses each question's sample mean and standard deviation.
    """
    if not table.records:
        raise InsufficientDataError("cannot fit normalization on an empty table")
    if method == "scale_bounds_minmax":
        offset = {q.question_id: float(q.scale_min) for q in table.question_registry}
        scale = {q.question_id: float(q.scale_max - q.scale_min) for q in table.question_registry}
    elif method == "zscore":
        offset, scale = {}, {}
        for q in table.question_registry:
            values = np.array([r.responses[q.question_id] for r in table.records], dtype=float)
            sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
            if sd == 0.0:
                raise DegenerateScaleError(q.question_id)
            offset[q.question_id] = float(values.mean())
            scale[q.question_id] = sd
    else:
        raise ConfigError(f"unknown normalization method {method!r}", field="normalization")
    return NormalizationParams(method, offset, scale)


# --------------------------------------------------------------------------
# composites


@dataclass
class FeatureVector:
    participant_id: str
    date: dt.date
    values: dict[str, float] = field(default_factory=dict)

    def array(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.values[n] for n in names], dtype=float)


def compose(
    normalized: Mapping[str, float],
    registry: Iterable[QuestionSpec],
    penalty: float = 1.0,
) -> dict[str, float]:
    """Collapse normalized question values into the six questionnaire composites.

    Categories with several questions are averaged. Activity is the ADL
    composite minus ``penalty`` times the pain-interference composite.
    """
    by_cat: dict[str, list[float]] = {}
    for q in registry:
        if q.question_id not in normalized:
            raise CompletenessError(f"missing question {q.question_id!r}")
        by_cat.setdefault(q.category, []).append(normalized[q.question_id])

    def mean(cat: str) -> float:
        if cat not in by_cat:
            raise CompletenessError(f"registry has no {cat!r} question")
        vals = by_cat[cat]
        return sum(vals) / len(vals)

    return {
        "pain": mean("pain"),
        "mood": mean("mood"),
        "sleep": mean("sleep"),
        "alertness": mean("alertness"),
        "medication": mean("medication"),
        "activity": mean("activity_adl") - penalty * mean("activity_interference"),
    }


# --------------------------------------------------------------------------
# covariate residualization and PCA


def residualize(X, age, sex) -> tuple[np.ndarray, np.ndarray]:
    """Regress ``[1, age, sex]`` out of every column of ``X`` by least squares.

    Returns ``(residuals, coefficients)`` where ``coefficients`` has shape
    ``(3, n_features)`` (intercept, age slope, sex slope). A rank-deficient
    design falls back to intercept-only (slopes reported as 0).
    """
    X = np.asarray(X, dtype=float)
    age = np.asarray(age, dtype=float).ravel()
    sex = np.asarray(sex, dtype=float).ravel()
    if X.ndim != 2 or len(age) != X.shape[0] or len(sex) != X.shape[0]:
        raise ConfigError("rows of features, age and sex must align", field="covariates")
    if not (np.isfinite(age).all() and np.isfinite(sex).all()):
        raise ConfigError("missing covariate values", field="covariates")

    design = np.column_stack([np.ones_like(age), age, sex])
    if np.linalg.matrix_rank(design) < 3:
        log.warning("rank-deficient covariate design; falling back to intercept-only residuals")
        mean = X.mean(axis=0)
        coef = np.vstack([mean, np.zeros_like(mean), np.zeros_like(mean)])
        return X - mean, coef
    coef, *_ = np.linalg.lstsq(design, X, rcond=None)
    return X - design @ coef, coef


@dataclass
class VoiceComponents:
    feature_names: list[str]
    column_mean: np.ndarray  # standardization applied before residualization
    column_sd: np.ndarray
    residual_coef: np.ndarray  # (3, n_features)
    center: np.ndarray
    loadings: np.ndarray  # (n_features, n_components)
    explained_variance_ratio: np.ndarray
    scores: np.ndarray
    score_scale: float = 1.0

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    @property
    def component_names(self) -> list[str]:
        return [f"voice_pc_{i + 1}" for i in range(self.n_components)]

    def transform(self, X, age, sex) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.column_mean) / self.column_sd
        design = np.column_stack([np.ones(len(Z)), np.asarray(age, float), np.asarray(sex, float)])
        R = Z - design @ self.residual_coef
        return (R - self.center) @ self.loadings / self.score_scale

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "column_mean": self.column_mean.tolist(),
            "column_sd": self.column_sd.tolist(),
            "residual_coef": self.residual_coef.tolist(),
            "center": self.center.tolist(),
            "loadings": self.loadings.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "score_scale": self.score_scale,
        }


def pca_reduce(residuals, var_threshold: float = 0.02) -> VoiceComponents:
    """Centered SVD, keeping every component explaining >= ``var_threshold``.

    Component signs are fixed so each loading vector's largest-magnitude
    entry is positive.
    """
    R = np.asarray(residuals, dtype=float)
    if R.ndim != 2 or R.shape[0] < 2:
        raise InsufficientDataError("PCA needs at least 2 rows")
    if not 0.0 < var_threshold < 1.0:
        raise ConfigError("must lie in (0, 1)", field="var_threshold")
    center = R.mean(axis=0)
    Rc = R - center
    _, s, vt = np.linalg.svd(Rc, full_matrices=False)
    total = float(np.sum(s**2))
    if total == 0.0:
        raise InsufficientDataError("PCA input has zero variance")
    ratio = s**2 / total
    keep = ratio >= var_threshold
    V = vt[keep].T
    pivots = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivots, np.arange(V.shape[1])])
    p = R.shape[1]
    return VoiceComponents(
        feature_names=[f"f{i}" for i in range(p)],
        column_mean=np.zeros(p),
        column_sd=np.ones(p),
        residual_coef=np.zeros((3, p)),
        center=center,
        loadings=V,
        explained_variance_ratio=ratio[keep],
        scores=Rc @ V,
    )


def fit_voice_components(
    X,
    age,
    sex,
    feature_names: Sequence[str],
    var_threshold: float = 0.02,
) -> VoiceComponents:
    """Standardize, residualize on age/sex, then PCA a raw voice table.

    Scores are divided by the square root of the total residual variance, so
    components keep their relative spread but share the unit scale of the
    normalized questionnaire composites.
    """
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    R, coef = residualize((X - mean) / sd, age, sex)
    comps = pca_reduce(R, var_threshold)
    scale = float(np.sqrt(np.sum((R - comps.center) ** 2) / (len(R) - 1)))
    comps.feature_names = list(feature_names)
    comps.column_mean = mean
    comps.column_sd = sd
    comps.residual_coef = coef
    comps.score_scale = scale
    comps.scores = comps.scores / scale
    return comps


# --------------------------------------------------------------------------
# actigraphy


@dataclass
class MobilityProfile:
    participant_id: str
    date: dt.date
    zone_fractions: np.ndarray
    effective_mobility: float


def zone_of(rate, thresholds) -> np.ndarray:
    """Zone index 0..4; a rate equal to a threshold falls in the upper zone."""
    return np.searchsorted(np.asarray(thresholds, dtype=float), np.asarray(rate, dtype=float), side="right")


def derive_zones(
    stream: pd.DataFrame,
    window_length: int = DEFAULT_WINDOW_MINUTES,
    thresholds: Sequence[float] = DEFAULT_ZONE_THRESHOLDS,
    day_start_hour: int = 0,
) -> list[MobilityProfile]:
    """Per-day zone occupancy and effective mobility from an activity-rate stream.

    ``stream`` has columns ``participant_id, timestamp, activity_rate``.
    Samples are grouped into fixed ``window_length``-minute windows; each
    window gets the zone of its mean rate. Effective mobility is the mean of
    ``zone / 4`` over the day's windows.
    """
    th = np.asarray(thresholds, dtype=float)
    if th.shape != (N_ZONES - 1,) or np.any(np.diff(th) <= 0):
        raise ConfigError("need 4 strictly increasing thresholds", field="zone_thresholds")
    if window_length <= 0:
        raise ConfigError("must be positive", field="window_length")
    if stream.empty:
        return []
    rates = stream["activity_rate"].to_numpy(dtype=float)
    if np.any(~np.isfinite(rates)) or np.any(rates < 0):
        raise ParseError("activity_rate must be finite and >= 0")

    ts = pd.to_datetime(stream["timestamp"])
    shifted = ts - pd.Timedelta(hours=day_start_hour)
    frame = pd.DataFrame(
        {
            "pid": stream["participant_id"].astype(str).to_numpy(),
            "day": shifted.dt.date.to_numpy(),
            "window": ts.dt.floor(f"{int(window_length)}min").to_numpy(),
            "rate": rates,
        }
    )
    windows = frame.groupby(["pid", "day", "window"], sort=True)["rate"].mean().reset_index()
    windows["zone"] = zone_of(windows["rate"].to_numpy(), th)

    counts = (
        windows.groupby(["pid", "day", "zone"], sort=True).size().unstack("zone", fill_value=0)
        .reindex(columns=range(N_ZONES), fill_value=0)
    )
    fractions = counts.to_numpy(dtype=float)
    fractions /= fractions.sum(axis=1, keepdims=True)
    em = fractions @ (np.arange(N_ZONES) / (N_ZONES - 1))
    return [
        MobilityProfile(pid, day, fractions[i], float(em[i]))
        for i, (pid, day) in enumerate(counts.index)
    ]


def read_actigraphy(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"participant_id": str})
    expected = ["participant_id", "timestamp", "activity_rate"]
    if list(frame.columns) != expected:
        raise SchemaError(f"actigraphy.csv: expected header {','.join(expected)}", line=1)
    return frame


def watch_days(profiles: Iterable[MobilityProfile]) -> dict[str, int]:
    out: dict[str, int] = {}
    for p in profiles:
        out[p.participant_id] = out.get(p.participant_id, 0) + 1
    return out


# --------------------------------------------------------------------------
# voice table


def read_voice(stream: TextIO) -> tuple[list[tuple[str, dt.date]], list[str], np.ndarray]:
    """Read ``voice.csv`` into (keys, feature names, matrix)."""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or header[:2] != ["participant_id", "date"] or len(header) < 3:
        raise SchemaError("voice.csv: expected participant_id,date,<features...>", line=1)
    names = header[2:]
    keys, rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            keys.append((row[0], parse_day(row[1])))
            rows.append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
    return keys, names, np.array(rows, dtype=float).reshape(len(rows), len(names))


def voice_features(
    keys: Sequence[tuple[str, dt.date]],
    names: Sequence[str],
    X: np.ndarray,
    demographics: Mapping[str, tuple[float, float]],
    var_threshold: float = 0.02,
) -> tuple[VoiceComponents, dict[tuple[str, dt.date], dict[str, float]]]:
    """Fit voice components on every sample with known demographics."""
    rows = [i for i, (pid, _) in enumerate(keys) if pid in demographics]
    if len(rows) < 2:
        raise InsufficientDataError("fewer than 2 voice samples with demographics")
    age = np.array([demographics[keys[i][0]][0] for i in rows])
    sex = np.array([demographics[keys[i][0]][1] for i in rows])
    comps = fit_voice_components(X[rows], age, sex, names, var_threshold)
    cnames = comps.component_names
    table: dict[tuple[str, dt.date], dict[str, float]] = {}
    for i, score in zip(rows, comps.scores):
        # several recordings on one day are averaged like questionnaire answers
        table.setdefault(keys[i], []).append(score)
    out = {k: dict(zip(cnames, np.mean(v, axis=0).tolist())) for k, v in table.items()}
    return comps, out


# --------------------------------------------------------------------------
# assembly


@dataclass
class JoinSummary:
    questionnaire_days: int
    mobility_days: int | None
    voice_days: int | None
    joined_days: int
    participants: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def assemble_features(
    table: CohortTable,
    params: NormalizationParams,
    mobility: Iterable[MobilityProfile] | None = None,
    voice: Mapping[tuple[str, dt.date], Mapping[str, float]] | None = None,
    penalty: float = 1.0,
    how: str = "inner",
) -> tuple[list[FeatureVector], JoinSummary]:
    """Join questionnaire composites with the enabled modalities on (participant, date).

    The default inner join drops any day lacking an enabled modality. With
    ``how="left"`` every questionnaire day is kept and absent modality values
    are NaN, which is the wide table the CLI stores so that each dataset
    variant can be cut from it later (see :func:`select_modality`).
    """
    if how not in ("inner", "left"):
        raise ConfigError(f"unknown join {how!r}", field="how")
    inner = how == "inner"
    voice_names: list[str] = []
    if voice:
        voice_names = list(next(iter(voice.values())))
    mob = None
    if mobility is not None:
        mob = {(p.participant_id, p.date): p.effective_mobility for p in mobility}
    out = []
    for rec in table.records:
        key = (rec.participant_id, rec.date)
        if inner and mob is not None and key not in mob:
            continue
        if inner and voice is not None and key not in voice:
            continue
        values = compose(params.apply(rec.responses), table.question_registry, penalty)
        if mob is not None:
            values[MOBILITY_FEATURE] = mob.get(key, float("nan"))
        if voice is not None:
            values.update(voice.get(key, dict.fromkeys(voice_names, float("nan"))))
        out.append(FeatureVector(rec.participant_id, rec.date, values))
    summary = JoinSummary(
        questionnaire_days=len(table.records),
        mobility_days=None if mob is None else len(mob),
        voice_days=None if voice is None else len(voice),
        joined_days=sum(all(np.isfinite(x) for x in v.values.values()) for v in out),
        participants=len({v.participant_id for v in out}),
    )
    return out, summary


def feature_matrix(vectors: Sequence[FeatureVector], names: Sequence[str]) -> np.ndarray:
    if not vectors:
        return np.zeros((0, len(names)))
    return np.array([[v.values[n] for n in names] for v in vectors], dtype=float)


def feature_names_of(vectors: Sequence[FeatureVector]) -> list[str]:
    if not vectors:
        return list(QUESTIONNAIRE_FEATURES)
    return list(vectors[0].values)


def write_features(stream: TextIO, vectors: Sequence[FeatureVector], names: Sequence[str] | None = None) -> None:
    names = list(names) if names is not None else feature_names_of(vectors)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["participant_id", "date", *names])
    for v in vectors:
        writer.writerow([v.participant_id, v.date.isoformat(), *(repr(float(v.values[n])) for n in names)])


def read_features(stream: TextIO) -> list[FeatureVector]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or header[:2] != ["participant_id", "date"]:
        raise SchemaError("features.csv: expected participant_id,date,<features...>", line=1)
    names = header[2:]
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            vals = {n: float(x) for n, x in zip(names, row[2:], strict=True)}
            out.append(FeatureVector(row[0], dt.date.fromisoformat(row[1]), vals))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
    return out


def select_modality(vectors: Sequence[FeatureVector], modality: str) -> tuple[list[FeatureVector], list[str]]:
    """Restrict vectors to one of the three dataset variants.

    ``questionnaires`` keeps the six composites; ``mobility`` adds effective
    mobility; ``voice`` adds the voice components. Rows lacking a required
    column are dropped.
    """
    names = feature_names_of(vectors)
    if modality == "questionnaires":
        wanted = list(QUESTIONNAIRE_FEATURES)
    elif modality == "mobility":
        wanted = [*QUESTIONNAIRE_FEATURES, MOBILITY_FEATURE]
    elif modality == "voice":
        wanted = [*QUESTIONNAIRE_FEATURES, *(n for n in names if n.startswith("voice_pc_"))]
    else:
        raise ConfigError(f"unknown modality {modality!r}", field="modality")
    missing = [w for w in wanted if w not in names]
    if missing:
        raise ConfigError(f"features lack columns {missing}", field="modality")
    out = []
    for v in vectors:
        vals = {w: v.values[w] for w in wanted}
        if all(np.isfinite(x) for x in vals.values()):
            out.append(FeatureVector(v.participant_id, v.date, vals))
    return out, wanted
