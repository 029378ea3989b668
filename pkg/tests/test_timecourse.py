import datetime as dt
import io

import numpy as np
import pytest

from painstates.clustering import ClusterModel
from painstates.errors import ConfigError, DimensionError, ParseError, SchemaError
from painstates.features import FeatureVector
from painstates.pipeline import RunConfig, build_model, build_validation
from painstates.timecourse import (
    Event,
    StateTimecourse,
    TimecourseEntry,
    assign_states,
    dwell_contrast,
    event_date_for,
    event_dates,
    read_assignments,
    read_events,
    write_assignments,
    write_events,
)

D0 = dt.date(2022, 5, 1)


def day(i):
    return D0 + dt.timedelta(days=i)


def model(C, ranking):
    C = np.asarray(C, dtype=float)
    return ClusterModel(k=len(C), centroids=C, feature_names=["pain"], seed=0, wcss=0.0, ranking=list(ranking))


def vec(i, pain, pid="p"):
    return FeatureVector(pid, day(i), {"pain": pain})


def timecourse(labels, start=0, pid="p"):
    return StateTimecourse(pid, [TimecourseEntry(day(start + i), lab, 0, np.zeros(1)) for i, lab in enumerate(labels)])


# ---------------------------------------------------------------- assignment

def test_exact_centroid_gets_its_label():
    m = model([[0.9], [0.1], [0.5]], ["C", "A", "B"])
    (tc,) = assign_states(m, [vec(0, 0.1), vec(1, 0.5), vec(2, 0.9)])
    assert tc.labels == ["A", "B", "C"]
    assert tc.entries[0].distances.tolist() == pytest.approx([0.8, 0.0, 0.4])


def test_equidistant_goes_to_better_state():
    m = model([[0.8], [0.2]], ["B", "A"])
    (tc,) = assign_states(m, [vec(0, 0.5)])
    assert tc.labels == ["A"] and tc.entries[0].state == 1


def test_days_with_missing_features_are_skipped():
    m = model([[0.0], [1.0]], ["A", "B"])
    (tc,) = assign_states(m, [vec(0, float("nan")), vec(1, 0.9)])
    assert tc.dates == [day(1)] and tc.labels == ["B"]


def test_output_sorted_by_participant_then_date():
    m = model([[0.0], [1.0]], ["A", "B"])
    tcs = assign_states(m, [vec(3, 0.0, "q"), vec(1, 1.0, "p"), vec(0, 0.0, "q")])
    assert [tc.participant_id for tc in tcs] == ["p", "q"]
    assert tcs[1].dates == [day(0), day(3)]


def test_assignment_needs_ranking_and_features():
    unranked = ClusterModel(k=1, centroids=np.zeros((1, 1)), feature_names=["pain"], seed=0, wcss=0.0)
    with pytest.raises(ConfigError):
        assign_states(unranked, [vec(0, 0.0)])
    with pytest.raises(DimensionError):
        assign_states(model([[0.0]], ["A"]), [FeatureVector("p", D0, {"mood": 1.0})])


def test_assignment_recovers_synthetic_states(small_cohort):
    from painstates.pipeline import cohort_features

    cfg = RunConfig(k=3, restarts=10, n_perm=99)
    fb = cohort_features(small_cohort, cfg)
    m = build_model(fb.vectors, cfg)
    _, ranked = build_validation(m, fb.vectors, small_cohort.assessments, cfg)
    gt = small_cohort.ground_truth
    letters = sorted(ranked.ranking)
    matches = total = 0
    for tc in assign_states(ranked, fb.vectors):
        for e in tc.entries:
            truth = gt.states[(tc.participant_id, e.date)]
            matches += gt.quality_order[letters.index(e.label)] == truth
            total += 1
    assert matches / total >= 0.9


# ---------------------------------------------------------------- dwell

def test_dwell_all_one_state_then_all_other():
    tc = timecourse(["A"] * 10 + ["X"] + ["B"] * 10)
    c = dwell_contrast(tc, day(10), 10, 10, ["A", "B"])
    assert c.pre_fractions.tolist() == [1.0, 0.0]
    assert c.post_fractions.tolist() == [0.0, 1.0]
    assert c.delta.tolist() == [-1.0, 1.0]
    assert (c.n_pre, c.n_post) == (10, 10)


def test_dwell_identical_windows_give_zero_delta():
    tc = timecourse(["A", "B"] * 10 + ["A"] + ["A", "B"] * 10)
    c = dwell_contrast(tc, day(20), 20, 20, ["A", "B"])
    assert np.allclose(c.delta, 0.0)


def test_event_day_in_neither_window():
    tc = timecourse(["A", "C", "B"])
    c = dwell_contrast(tc, day(1), 1, 1, ["A", "B", "C"])
    assert c.pre_fractions.tolist() == [1.0, 0.0, 0.0]
    assert c.post_fractions.tolist() == [0.0, 1.0, 0.0]
    assert c.post_fractions[2] == 0.0


def test_window_bounds_are_inclusive_outer_edges():
    tc = timecourse(["A"] * 7)
    c = dwell_contrast(tc, day(3), 2, 2, ["A"])
    assert (c.n_pre, c.n_post) == (2, 2)


def test_empty_window_is_nan():
    tc = timecourse(["A", "B"])
    c = dwell_contrast(tc, day(30), 5, 5, ["A", "B"])
    assert c.empty and np.isnan(c.pre_fractions).all() and np.isnan(c.post_fractions).all()


def test_dwell_fractions_sum_to_one():
    rng = np.random.default_rng(0)
    tc = timecourse(list(rng.choice(list("ABCD"), 60)))
    c = dwell_contrast(tc, day(30), 30, 29, list("ABCD"))
    assert c.pre_fractions.sum() == pytest.approx(1.0) and c.post_fractions.sum() == pytest.approx(1.0)


def test_dwell_window_validated():
    with pytest.raises(ConfigError):
        dwell_contrast(timecourse(["A"]), D0, 0, 5)


# ---------------------------------------------------------------- events and files

def test_event_lookup():
    evs = [Event("p", day(5), "scs_implant"), Event("p", day(2), "scs_implant"), Event("q", day(1), "other")]
    dates = event_dates(evs, "scs_implant")
    assert dates == {"p": day(2)}
    assert event_date_for(dates, "p") == day(2)
    with pytest.raises(LookupError, match="q"):
        event_date_for(dates, "q")


def test_events_round_trip_and_errors():
    evs = [Event("p", day(5), "scs_implant")]
    buf = io.StringIO()
    write_events(buf, evs)
    buf.seek(0)
    assert read_events(buf) == evs
    with pytest.raises(SchemaError):
        read_events(io.StringIO("a,b,c\n"))
    with pytest.raises(ParseError):
        read_events(io.StringIO("participant_id,date,event_type\np,tomorrow,x\n"))


def test_assignments_round_trip():
    m = model([[0.9], [0.1]], ["B", "A"])
    tcs = assign_states(m, [vec(0, 0.3), vec(1, 0.7), vec(0, 0.2, "q")])
    buf = io.StringIO()
    write_assignments(buf, tcs, m.k)
    buf.seek(0)
    back = read_assignments(buf, m.ranking)
    assert [tc.labels for tc in back] == [tc.labels for tc in tcs]
    assert [e.state for e in back[0].entries] == [e.state for e in tcs[0].entries]
    assert np.allclose(back[0].entries[0].distances, tcs[0].entries[0].distances)
