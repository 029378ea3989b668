"""Stage functions wiring synth -> ingest -> features -> cluster -> validate -> assign -> report.

Each ``run_*`` function reads its inputs from files, writes its artifacts
into ``out_dir`` and drops a ``<stage>_manifest.json`` next to them. The
``build_*`` helpers do the same work in memory.
"""

from __future__ import annotations

import dataclasses
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .clustering import ClusterModel, KSelectionReport, SelectionConfig, fit_model, robustness_splits, select_k
from .errors import ConfigError
from .features import (
    DEFAULT_WINDOW_MINUTES,
    DEFAULT_ZONE_THRESHOLDS,
    FeatureVector,
    JoinSummary,
    NormalizationParams,
    assemble_features,
    derive_zones,
    feature_matrix,
    fit_normalization,
    read_actigraphy,
    read_features,
    read_voice,
    select_modality,
    voice_features,
    watch_days,
    write_features,
)
from .ingest import (
    CohortTable,
    aggregate_daily,
    filter_complete,
    load_demographics,
    load_questions,
    parse_daily_records,
    read_cohort,
    response_rates,
    write_cohort,
)
from .jsonio import manifest, read_json, write_json
from .report import export_timecourse, plot_selection, plot_state_profiles
from .synth import CohortSpec, SyntheticCohort, generate_cohort
from .timecourse import assign_states, event_dates, read_assignments, read_events, write_assignments
from .validation import (
    ValidationReport,
    distance_samples,
    pair_assessments,
    ranked_model,
    read_assessments,
    validate_states,
)

log = logging.getLogger(__name__)

MODALITIES = ("questionnaires", "voice", "mobility")
ROBUSTNESS_SPLITS = ("high_responders", "temporal")


@dataclass
class RunConfig:
    normalization: str = "scale_bounds_minmax"
    penalty: float = 1.0
    day_start_hour: int = 0
    min_days: int = 10
    require_watch: bool = False
    min_watch_days: int = 10
    window_minutes: int = DEFAULT_WINDOW_MINUTES
    zone_thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_ZONE_THRESHOLDS))
    voice_var_threshold: float = 0.02
    modality: str = "mobility"
    k_range: list[int] = field(default_factory=lambda: list(range(2, 11)))
    k: int | None = None
    seed: int = 0
    restarts: int = 50
    selection: dict = field(default_factory=dict)
    window_days: int = 7
    n_perm: int = 10000
    event_type: str = "scs_implant"
    pre_days: int = 30
    post_days: int = 30
    robustness: list[str] = field(default_factory=list)
    threads: int = 1

    def __post_init__(self):
        for split in self.robustness:
            if split not in ROBUSTNESS_SPLITS:
                raise ConfigError(f"unknown split {split!r}", field="robustness")
        if self.modality not in MODALITIES:
            raise ConfigError(f"one of {', '.join(MODALITIES)}", field="modality")
        if self.k is not None and self.k < 1:
            raise ConfigError("must be >= 1", field="k")
        if len(self.k_range) < 2 or min(self.k_range) < 1:
            raise ConfigError("need at least two values >= 1", field="k_range")
        if self.restarts < 1:
            raise ConfigError("must be >= 1", field="restarts")
        if self.n_perm < 1:
            raise ConfigError("must be >= 1", field="n_perm")
        if self.window_days < 0:
            raise ConfigError("must be >= 0", field="window_days")
        if self.threads < 1:
            raise ConfigError("must be >= 1", field="threads")
        if self.penalty < 0:
            raise ConfigError("must be >= 0", field="penalty")
        known = {f.name for f in dataclasses.fields(SelectionConfig)}
        for key in self.selection:
            if key not in known:
                raise ConfigError(f"unknown selection setting {key!r}", field=f"selection.{key}")

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(restarts=self.restarts, **self.selection)

    def to_dict(self) -> dict:
        """Settings that can change results; ``threads`` is left out on purpose."""
        d = dataclasses.asdict(self)
        d.pop("threads")
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError("unknown setting", field=str(key))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc), field="config") from exc


def parse_k_range(text: str) -> list[int]:
    """``"2..10"`` (inclusive) or a comma list ``"2,3,5"``."""
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split("..", 1))
            ks = list(range(lo, hi + 1))
        else:
            ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {text!r}; use 2..10 or 2,3,5", field="k_range") from None
    if len(ks) < 2 or min(ks) < 1:
        raise ConfigError("need at least two values >= 1", field="k_range")
    return ks


def _write_manifest(out_dir: Path, stage: str, inputs, outputs, cfg: RunConfig | Mapping, seed) -> Path:
    config = cfg.to_dict() if isinstance(cfg, RunConfig) else dict(cfg)
    path = out_dir / f"{stage}_manifest.json"
    write_json(path, manifest(stage, [p for p in inputs if p is not None], outputs, config, seed))
    return path


def _open(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(2, "no such file", str(path))
    return open(path, encoding="utf-8", newline="")


# --------------------------------------------------------------------------
# in-memory builders


@dataclass
class FeatureBundle:
    vectors: list[FeatureVector]
    summary: JoinSummary
    normalization: NormalizationParams
    table: CohortTable
    voice_components: dict | None = None


def build_table(records_text: str, questions, cfg: RunConfig, watch: Mapping[str, int] | None = None) -> CohortTable:
    raw = parse_daily_records(io.StringIO(records_text), questions, cfg.day_start_hour)
    return filter_complete(
        aggregate_daily(raw),
        questions,
        cfg.min_days,
        cfg.require_watch,
        cfg.min_watch_days,
        watch,
    )


def build_features(
    table: CohortTable,
    cfg: RunConfig,
    actigraphy=None,
    voice: tuple | None = None,
    demographics: Mapping[str, tuple[float, float]] | None = None,
) -> FeatureBundle:
    """Wide left-joined feature table: composites plus mobility and voice columns when given."""
    params = fit_normalization(table, cfg.normalization)
    mobility = None
    if actigraphy is not None:
        mobility = derive_zones(actigraphy, cfg.window_minutes, cfg.zone_thresholds, cfg.day_start_hour)
    voice_table, comps = None, None
    if voice is not None:
        if demographics is None:
            raise ConfigError("voice features need demographics for residualization", field="demographics")
        keys, names, X = voice
        comps, voice_table = voice_features(keys, names, X, demographics, cfg.voice_var_threshold)
    vectors, summary = assemble_features(table, params, mobility, voice_table, cfg.penalty, how="left")
    return FeatureBundle(vectors, summary, params, table, None if comps is None else comps.to_dict())


def cohort_features(cohort: SyntheticCohort, cfg: RunConfig | None = None) -> FeatureBundle:
    """Run ingest and feature construction on an in-memory synthetic cohort."""
    cfg = cfg or RunConfig()
    watch = None
    if cfg.require_watch:
        watch = watch_days(derive_zones(cohort.actigraphy, cfg.window_minutes, cfg.zone_thresholds))
    table = build_table(cohort.records_csv(), cohort.questions, cfg, watch)
    voice = (cohort.voice_keys, cohort.voice_names, cohort.voice) if len(cohort.voice_keys) else None
    return build_features(table, cfg, cohort.actigraphy, voice, cohort.demographics)


def build_model(
    vectors: Sequence[FeatureVector],
    cfg: RunConfig,
    modality: str | None = None,
    k: int | None = None,
    normalization: dict | None = None,
) -> ClusterModel:
    modality = modality or cfg.modality
    subset, names = select_modality(vectors, modality)
    X = feature_matrix(subset, names)
    k = k if k is not None else cfg.k
    report = None
    if k is None:
        report = select_k(X, cfg.k_range, cfg.seed, cfg.selection_config(), cfg.threads)
        k = report.chosen_k
    return fit_model(
        X,
        names,
        k,
        cfg.seed,
        cfg.restarts,
        cfg.threads,
        normalization=normalization,
        selection=report,
        modality=modality,
    )


def build_validation(model: ClusterModel, vectors, assessments, cfg: RunConfig) -> tuple[ValidationReport, ClusterModel]:
    subset, _ = select_modality(vectors, model.modality)
    pairs = pair_assessments(distance_samples(model, subset), assessments, cfg.window_days)
    report = validate_states(model, pairs, cfg.n_perm, cfg.seed, cfg.window_days, threads=cfg.threads)
    return report, ranked_model(model, report)


# --------------------------------------------------------------------------
# file stages


def run_synth(spec: CohortSpec, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    cohort = generate_cohort(spec)
    paths = cohort.write(out)
    _write_manifest(out, "synth", [], paths.values(), spec.to_dict(), spec.seed)
    return paths


def run_ingest(records, questions, out_dir, cfg: RunConfig, actigraphy=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _open(questions) as fh:
        registry = load_questions(fh)
    watch = None
    if cfg.require_watch:
        if actigraphy is None:
            raise ConfigError("require_watch needs an actigraphy file", field="require_watch")
        watch = watch_days(derive_zones(read_actigraphy(_checked(actigraphy)), cfg.window_minutes, cfg.zone_thresholds, cfg.day_start_hour))
    with _open(records) as fh:
        table = build_table(fh.read(), registry, cfg, watch)
    path = out / "cohort.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_cohort(fh, table)
    inputs = [records, questions, actigraphy if cfg.require_watch else None]
    _write_manifest(out, "ingest", inputs, [path], cfg, cfg.seed)
    return path


def _checked(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(2, "no such file", str(path))
    return path


def run_features(cohort, questions, out_dir, cfg: RunConfig, actigraphy=None, voice=None, demographics=None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with _open(questions) as fh:
        registry = load_questions(fh)
    with _open(cohort) as fh:
        table = read_cohort(fh, registry)
    acti = read_actigraphy(_checked(actigraphy)) if actigraphy is not None else None
    voice_data = demo = None
    if voice is not None:
        with _open(voice) as fh:
            voice_data = read_voice(fh)
        if demographics is None:
            raise ConfigError("voice features need a demographics file", field="demographics")
        with _open(demographics) as fh:
            demo = load_demographics(fh)
    bundle = build_features(table, cfg, acti, voice_data, demo)
    path = out / "features.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_features(fh, bundle.vectors)
    norm = out / "normalization.json"
    write_json(norm, {"normalization": bundle.normalization.to_dict(), "join": bundle.summary.to_dict(),
                      "voice_components": bundle.voice_components})
    _write_manifest(out, "features", [cohort, questions, actigraphy, voice, demographics], [path, norm], cfg, cfg.seed)
    return path


def _read_vectors(path) -> list[FeatureVector]:
    with _open(path) as fh:
        return read_features(fh)


def run_cluster(features, out_dir, cfg: RunConfig, normalization=None, cohort=None, events=None) -> Path:
    """Fit the model; with ``cfg.robustness`` also refit on the configured splits.

    The high-responder split reads response counts from ``cohort`` and the
    temporal split reads event dates from ``events``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vectors = _read_vectors(features)
    norm = read_json(_checked(normalization))["normalization"] if normalization is not None else None
    model = build_model(vectors, cfg, normalization=norm)
    path = out / "model.json"
    write_json(path, model.to_dict())
    outputs = [path]
    if model.selection is not None:
        sel = out / "k_selection.json"
        write_json(sel, model.selection.to_dict())
        outputs.append(sel)
    if cfg.robustness:
        subset, _ = select_modality(vectors, model.modality)
        reports = []
        for split in cfg.robustness:
            rates = ev = None
            if split == "high_responders":
                if cohort is None:
                    raise ConfigError("the high_responders split needs --cohort", field="robustness")
                with _open(cohort) as fh:
                    rates = response_rates(read_cohort(fh, []).records)
            else:
                if events is None:
                    raise ConfigError("the temporal split needs --events", field="robustness")
                with _open(events) as fh:
                    ev = event_dates(read_events(fh), cfg.event_type)
            found = robustness_splits(
                subset, model, split, rates, ev, cfg.restarts, cfg.threads, include_full=not reports
            )
            reports.extend(r.to_dict() for r in found)
        rob = out / "robustness.json"
        write_json(rob, {"k": model.k, "splits": reports})
        outputs.append(rob)
    inputs = [features, normalization]
    if cfg.robustness:
        inputs += [cohort if "high_responders" in cfg.robustness else None, events if "temporal" in cfg.robustness else None]
    _write_manifest(out, "cluster", inputs, outputs, cfg, cfg.seed)
    return path


def run_validate(model_path, features, assessments, out_dir, cfg: RunConfig) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = ClusterModel.from_dict(read_json(_checked(model_path)))
    vectors = _read_vectors(features)
    with _open(assessments) as fh:
        records = read_assessments(fh)
    report, ranked = build_validation(model, vectors, records, cfg)
    vpath, mpath = out / "validation.json", out / "ranked_model.json"
    write_json(vpath, report.to_dict())
    write_json(mpath, ranked.to_dict())
    _write_manifest(out, "validate", [model_path, features, assessments], [vpath, mpath], cfg, cfg.seed)
    return vpath, mpath


def run_assign(model_path, features, out_dir, cfg: RunConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = ClusterModel.from_dict(read_json(_checked(model_path)))
    subset, _ = select_modality(_read_vectors(features), model.modality)
    timecourses = assign_states(model, subset)
    path = out / "assignments.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_assignments(fh, timecourses, model.k)
    _write_manifest(out, "assign", [model_path, features], [path], cfg, cfg.seed)
    return path


def run_report(model_path, assignments, features, out_dir, cfg: RunConfig, events=None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = ClusterModel.from_dict(read_json(_checked(model_path)))
    if not model.ranking:
        raise ConfigError("model has no ordinal ranking; pass ranked_model.json", field="model")
    with _open(assignments) as fh:
        timecourses = read_assignments(fh, model.ranking)
    vectors = _read_vectors(features)
    ev = None
    if events is not None:
        with _open(events) as fh:
            ev = event_dates(read_events(fh), cfg.event_type)
    bundle = export_timecourse(
        timecourses,
        vectors,
        out,
        sorted(model.ranking),
        ev,
        cfg.pre_days,
        cfg.post_days,
        trace_features=[n for n in model.feature_names if not n.startswith("voice_pc_")],
    )
    files = list(bundle.files)
    files.append(plot_state_profiles(model, out / "state_profiles.svg"))
    if model.selection is not None:
        files.append(plot_selection(model.selection, out / "k_selection.svg"))
    _write_manifest(out, "report", [model_path, assignments, features, events], files, cfg, cfg.seed)
    return files


def run_pipeline(spec: CohortSpec, out_dir, cfg: RunConfig) -> dict[str, Path]:
    """Every stage in order on a freshly generated cohort."""
    out = Path(out_dir)
    data = out / "data"
    paths = run_synth(spec, data)
    use_voice = cfg.modality == "voice"
    use_mobility = cfg.modality == "mobility" or cfg.require_watch
    cohort = run_ingest(paths["records.csv"], paths["questions.csv"], out, cfg, paths["actigraphy.csv"])
    features = run_features(
        cohort,
        paths["questions.csv"],
        out,
        cfg,
        actigraphy=paths["actigraphy.csv"] if use_mobility else None,
        voice=paths["voice.csv"] if use_voice else None,
        demographics=paths["demographics.csv"] if use_voice else None,
    )
    model = run_cluster(features, out, cfg, out / "normalization.json", cohort, paths["events.csv"])
    validation, ranked = run_validate(model, features, paths["assessments.csv"], out, cfg)
    assignments = run_assign(ranked, features, out, cfg)
    run_report(ranked, assignments, features, out / "report", cfg, paths["events.csv"])
    return {
        "cohort": cohort,
        "features": features,
        "model": model,
        "validation": validation,
        "ranked_model": ranked,
        "assignments": assignments,
        "report": out / "report",
    }


def load_config(path) -> RunConfig:
    data = read_json(_checked(path))
    if not isinstance(data, Mapping):
        raise ConfigError("config file must hold a JSON object", field="config")
    return RunConfig.from_dict(data)


def model_selection_of(path) -> KSelectionReport | None:
    sel = read_json(_checked(path)).get("selection")
    return None if sel is None else KSelectionReport.from_dict(sel)
