"""Command-line entry point.

Exit status: 0 on success, 2 for missing files, bad configuration or
malformed input, 3 when an internal invariant is breached.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .errors import ConfigError, InvariantError, PainStatesError
from .jsonio import env_default, read_json
from .synth import CohortSpec

CONFIG_ENV = "PAINSTATES_CONFIG"
EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3

log = logging.getLogger("painstates")


def _path(text: str) -> Path:
    return Path(text)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=_path, help=f"run config JSON (default: ${CONFIG_ENV})")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, help="worker cap; never changes results")
    p.add_argument("--out", type=_path, required=True, help="output directory")


def _add_cluster_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--modality", choices=pipeline.MODALITIES, help="dataset variant to cluster")
    p.add_argument("--k-range", dest="k_range", help="candidate k, e.g. 2..10 or 2,3,5")
    p.add_argument("--k", type=int, help="fix k and skip model selection")
    p.add_argument("--robustness", action="append", choices=pipeline.ROBUSTNESS_SPLITS,
                   help="refit on a data split and align to the model (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="painstates", description="Pain patient state toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--spec", type=_path, help="CohortSpec JSON (default spec if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=_path, required=True)

    p = sub.add_parser("ingest", help="parse, aggregate and filter daily records")
    _add_common(p)
    p.add_argument("--records", type=_path, required=True)
    p.add_argument("--questions", type=_path, required=True)
    p.add_argument("--actigraphy", type=_path, help="needed when require_watch is set")

    p = sub.add_parser("features", help="normalize, compose and join modalities")
    _add_common(p)
    p.add_argument("--cohort", type=_path, required=True)
    p.add_argument("--questions", type=_path, required=True)
    p.add_argument("--actigraphy", type=_path)
    p.add_argument("--voice", type=_path)
    p.add_argument("--demographics", type=_path)

    p = sub.add_parser("cluster", help="select k and fit k-means")
    _add_common(p)
    _add_cluster_flags(p)
    p.add_argument("--features", type=_path, required=True)
    p.add_argument("--normalization", type=_path, help="normalization.json to embed in the model")
    p.add_argument("--cohort", type=_path, help="cohort.csv, for the high_responders split")
    p.add_argument("--events", type=_path, help="events.csv, for the temporal split")

    p = sub.add_parser("validate", help="correlate centroid distances with assessments and rank states")
    _add_common(p)
    p.add_argument("--model", type=_path, required=True)
    p.add_argument("--features", type=_path, required=True)
    p.add_argument("--assessments", type=_path, required=True)
    p.add_argument("--n-perm", dest="n_perm", type=int)

    p = sub.add_parser("assign", help="label every day with its nearest ranked state")
    _add_common(p)
    p.add_argument("--model", type=_path, required=True, help="ranked_model.json")
    p.add_argument("--features", type=_path, required=True)

    p = sub.add_parser("report", help="per-patient CSVs and SVG figures")
    _add_common(p)
    p.add_argument("--model", type=_path, required=True, help="ranked_model.json")
    p.add_argument("--assignments", type=_path, required=True)
    p.add_argument("--features", type=_path, required=True)
    p.add_argument("--events", type=_path)

    p = sub.add_parser("pipeline", help="run every stage on a synthetic cohort")
    _add_common(p)
    _add_cluster_flags(p)
    p.add_argument("--spec", type=_path, help="CohortSpec JSON (default spec if omitted)")
    p.add_argument("--n-perm", dest="n_perm", type=int)
    return parser


def load_run_config(args: argparse.Namespace) -> pipeline.RunConfig:
    """Config file (flag, then environment), then command-line overrides."""
    path = getattr(args, "config", None) or env_default(CONFIG_ENV)
    data = {}
    if path:
        raw = read_json(pipeline._checked(path))
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object", field="config")
        data.update(raw)
    for name in ("seed", "threads", "modality", "k", "n_perm", "robustness"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if getattr(args, "k_range", None):
        data["k_range"] = pipeline.parse_k_range(args.k_range)
    return pipeline.RunConfig.from_dict(data)


def load_spec(path: Path | None, seed: int | None = None) -> CohortSpec:
    data = {}
    if path is not None:
        data = read_json(pipeline._checked(path))
        if not isinstance(data, dict):
            raise ConfigError("spec file must hold a JSON object", field="spec")
    if seed is not None:
        data["seed"] = seed
    try:
        return CohortSpec.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc), field="spec") from exc


def dispatch(args: argparse.Namespace) -> None:
    cmd = args.command
    if cmd == "synth":
        paths = pipeline.run_synth(load_spec(args.spec, args.seed), args.out)
        log.info("wrote %d files to %s", len(paths), args.out)
        return
    cfg = load_run_config(args)
    if cmd == "ingest":
        pipeline.run_ingest(args.records, args.questions, args.out, cfg, args.actigraphy)
    elif cmd == "features":
        pipeline.run_features(
            args.cohort, args.questions, args.out, cfg, args.actigraphy, args.voice, args.demographics
        )
    elif cmd == "cluster":
        pipeline.run_cluster(args.features, args.out, cfg, args.normalization, args.cohort, args.events)
    elif cmd == "validate":
        pipeline.run_validate(args.model, args.features, args.assessments, args.out, cfg)
    elif cmd == "assign":
        pipeline.run_assign(args.model, args.features, args.out, cfg)
    elif cmd == "report":
        pipeline.run_report(args.model, args.assignments, args.features, args.out, cfg, args.events)
    elif cmd == "pipeline":
        pipeline.run_pipeline(load_spec(args.spec), args.out, cfg)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 and usage on bad flags
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        dispatch(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (PainStatesError, LookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
