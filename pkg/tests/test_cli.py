import hashlib
import json

import pytest

from painstates import cli, pipeline
from painstates.errors import InvariantError
from painstates.jsonio import verify_manifest

SMALL_SPEC = {"n_participants": 8, "days_per_participant": 30, "event_day": 15, "n_states": 3, "seed": 2}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SMALL_SPEC))
    assert cli.main(["synth", "--spec", str(spec), "--out", str(root / "data")]) == 0
    return root


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["cluster", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_missing_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    code = cli.main(["cluster", "--features", str(missing), "--out", str(tmp_path)])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config_names_field(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"restarts": 0}))
    code = cli.main(["cluster", "--config", str(cfg), "--features", str(tmp_path / "f.csv"), "--out", str(tmp_path)])
    assert code == 2
    assert "restarts" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"restart": 3}))
    assert cli.main(["cluster", "--config", str(cfg), "--features", "x", "--out", str(tmp_path)]) == 2
    assert "restart" in capsys.readouterr().err


def test_bad_k_range(tmp_path, capsys):
    assert cli.main(["cluster", "--k-range", "2-9", "--features", "x", "--out", str(tmp_path)]) == 2
    assert "k_range" in capsys.readouterr().err


def test_invariant_breach_exits_3(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise InvariantError("WCSS increased")

    monkeypatch.setattr(pipeline, "run_cluster", boom)
    assert cli.main(["cluster", "--features", "x", "--out", str(tmp_path)]) == 3
    assert "WCSS" in capsys.readouterr().err


def test_k_range_parsing():
    assert pipeline.parse_k_range("2..10") == list(range(2, 11))
    assert len(pipeline.parse_k_range("2..10")) == 9
    assert pipeline.parse_k_range("2,3,5") == [2, 3, 5]


def test_config_from_environment(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"restarts": 7, "seed": 4}))
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    args = cli.build_parser().parse_args(["cluster", "--features", "f", "--out", "o", "--seed", "9"])
    run = cli.load_run_config(args)
    assert run.restarts == 7 and run.seed == 9


def test_synth_manifest_hashes(synth_dir):
    data = synth_dir / "data"
    man = json.loads((data / "synth_manifest.json").read_text())
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((data / name).read_bytes()).hexdigest() == digest
    assert man["seed"] == 2


def test_stagewise_run(synth_dir):
    d, out = synth_dir / "data", synth_dir / "run"
    common = ["--out", str(out), "--seed", "1"]
    assert cli.main(["ingest", "--records", str(d / "records.csv"), "--questions", str(d / "questions.csv"), *common]) == 0
    assert cli.main([
        "features", "--cohort", str(out / "cohort.csv"), "--questions", str(d / "questions.csv"),
        "--actigraphy", str(d / "actigraphy.csv"), *common,
    ]) == 0
    assert cli.main([
        "cluster", "--features", str(out / "features.csv"), "--normalization", str(out / "normalization.json"),
        "--k-range", "2..4", "--robustness", "temporal", "--events", str(d / "events.csv"), *common,
    ]) == 0
    model = json.loads((out / "model.json").read_text())
    assert model["k"] in (2, 3, 4) and (out / "k_selection.json").exists() and (out / "robustness.json").exists()
    assert cli.main([
        "validate", "--model", str(out / "model.json"), "--features", str(out / "features.csv"),
        "--assessments", str(d / "assessments.csv"), "--n-perm", "99", *common,
    ]) == 0
    assert cli.main(["assign", "--model", str(out / "ranked_model.json"), "--features", str(out / "features.csv"), *common]) == 0
    assert cli.main([
        "report", "--model", str(out / "ranked_model.json"), "--assignments", str(out / "assignments.csv"),
        "--features", str(out / "features.csv"), "--events", str(d / "events.csv"), "--out", str(out / "report"),
    ]) == 0
    assert len(list((out / "report").glob("*_timecourse.svg"))) == 8
    assert (out / "report" / "dwell.csv").exists()
    for stage in ("ingest", "features", "cluster", "validate", "assign"):
        assert verify_manifest(out / f"{stage}_manifest.json", [d]) == []
    assert verify_manifest(out / "report" / "report_manifest.json", [d, out]) == []


def test_report_requires_ranked_model(synth_dir, capsys):
    out = synth_dir / "run"
    if not (out / "model.json").exists():
        pytest.skip("stagewise run did not produce a model")
    code = cli.main([
        "report", "--model", str(out / "model.json"), "--assignments", str(out / "assignments.csv"),
        "--features", str(out / "features.csv"), "--out", str(synth_dir / "r2"),
    ])
    assert code == 2 and "ranking" in capsys.readouterr().err
