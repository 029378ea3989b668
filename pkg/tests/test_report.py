import datetime as dt
import xml.etree.ElementTree as ET

import numpy as np

from painstates.clustering import ClusterModel, KSelectionReport
from painstates.features import FeatureVector
from painstates.report import export_timecourse, plot_selection, plot_state_profiles, state_colors
from painstates.timecourse import StateTimecourse, TimecourseEntry

D0 = dt.date(2022, 1, 1)
SVG = "{http://www.w3.org/2000/svg}"


def tc_for(pid, labels):
    return StateTimecourse(
        pid, [TimecourseEntry(D0 + dt.timedelta(days=i), lab, 0, np.zeros(2)) for i, lab in enumerate(labels)]
    )


def raw(pid, n):
    return [FeatureVector(pid, D0 + dt.timedelta(days=i), {"pain": 0.1 * i, "mood": 0.5}) for i in range(n)]


def ids(path):
    return {el.get("id") for el in ET.parse(path).getroot().iter() if el.get("id")}


def test_empty_bundle(tmp_path):
    bundle = export_timecourse([], [], tmp_path / "r", ["A", "B"])
    assert bundle.files == [] and (tmp_path / "r").is_dir()


def test_single_patient_svg_ids(tmp_path):
    tc = tc_for("P01", list("AABBA" * 2))
    bundle = export_timecourse([tc], raw("P01", 10), tmp_path, ["A", "B"])
    svg = tmp_path / "P01_timecourse.svg"
    assert svg in bundle.files
    found = ids(svg)
    assert "state-band" in found and "feature-traces" in found
    cells = sorted(i for i in found if i.startswith("day-cell-"))
    assert len(cells) == 10
    assert cells[0] == "day-cell-2022-01-01" and cells[-1] == "day-cell-2022-01-10"
    assert not {"dwell-pre", "dwell-post"} & found
    csv_lines = (tmp_path / "P01_states.csv").read_text().splitlines()
    assert csv_lines[0] == "date,state_label" and csv_lines[1] == "2022-01-01,A" and len(csv_lines) == 11


def test_band_cells_are_inside_band_group(tmp_path):
    export_timecourse([tc_for("P", "AB")], raw("P", 2), tmp_path, ["A", "B"])
    root = ET.parse(tmp_path / "P_timecourse.svg").getroot()
    band = next(el for el in root.iter() if el.get("id") == "state-band")
    assert {el.get("id") for el in band.iter() if el.get("id", "").startswith("day-cell-")} == {
        "day-cell-2022-01-01",
        "day-cell-2022-01-02",
    }


def test_event_adds_dwell_panels_and_csv(tmp_path):
    tc = tc_for("P01", list("A" * 10 + "B" + "B" * 10))
    event = D0 + dt.timedelta(days=10)
    bundle = export_timecourse([tc], raw("P01", 21), tmp_path, ["A", "B"], events={"P01": event},
                               pre_days=10, post_days=10)
    found = ids(tmp_path / "P01_timecourse.svg")
    assert {"dwell-pre", "dwell-post"} <= found
    rows = (tmp_path / "dwell.csv").read_text().splitlines()
    assert rows[0] == "participant_id,event_date,window,n_days,A,B"
    assert rows[1] == "P01,2022-01-11,pre,10,1.0,0.0"
    assert rows[2] == "P01,2022-01-11,post,10,0.0,1.0"
    assert bundle.contrasts[0].delta.tolist() == [-1.0, 1.0]


def test_svg_is_byte_deterministic(tmp_path):
    tc = tc_for("P01", list("ABAB"))
    a = export_timecourse([tc], raw("P01", 4), tmp_path / "a", ["A", "B"], events={"P01": D0 + dt.timedelta(days=2)})
    b = export_timecourse([tc], raw("P01", 4), tmp_path / "b", ["A", "B"], events={"P01": D0 + dt.timedelta(days=2)})
    for fa, fb in zip(a.files, b.files):
        assert fa.read_bytes() == fb.read_bytes()
    assert b"<dc:date>" not in (tmp_path / "a" / "P01_timecourse.svg").read_bytes()


def test_unsafe_participant_id_is_sanitized(tmp_path):
    export_timecourse([tc_for("a/b c", "A")], [], tmp_path, ["A"])
    assert (tmp_path / "a_b_c_states.csv").exists()


def test_state_colors_best_is_greenest():
    cols = state_colors(["C", "A", "B"])
    assert cols["A"][1] > cols["C"][1] and cols["C"][0] > cols["A"][0]


def test_selection_and_profile_figures(tmp_path):
    rep = KSelectionReport(
        k_range=[2, 3, 4],
        wcss_curve=[10.0, 4.0, 3.5],
        silhouette_curve=[0.5, 0.7, 0.4],
        agglomerative_ari_curve=[0.9, 1.0, 0.8],
        consensus_pac_curve=[0.1, 0.0, 0.2],
        votes={"elbow": 3, "silhouette": 3, "agglomerative": 3, "consensus": 3},
        chosen_k=3,
    )
    p = plot_selection(rep, tmp_path / "k.svg")
    assert p.read_text().startswith("<?xml")
    m = ClusterModel(k=2, centroids=np.array([[0.2, 0.8], [0.7, 0.3]]), feature_names=["pain", "mood"],
                     seed=0, wcss=0.0, ranking=["A", "B"])
    q = plot_state_profiles(m, tmp_path / "profiles.svg")
    assert q.stat().st_size > 0
