import datetime as dt
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from painstates.clustering import ClusterModel
from painstates.errors import DimensionError, ParseError, SchemaError, UndefinedScoreError
from painstates.features import FeatureVector
from painstates.validation import (
    AssessmentRecord,
    CellResult,
    DistanceSample,
    ValidationReport,
    centroid_distances,
    correlate,
    distance_samples,
    pair_assessments,
    permutation_test,
    rank_states,
    ranked_model,
    ranking_scores,
    read_assessments,
    state_labels,
    validate_states,
    write_assessments,
)

D0 = dt.date(2021, 3, 1)


def day(i):
    return D0 + dt.timedelta(days=i)


def sample(i, pid="p1", d=(0.0,)):
    return DistanceSample(pid, day(i), np.asarray(d, dtype=float))


def odi(i, score=10.0, pid="p1"):
    return AssessmentRecord(pid, day(i), "ODI", score)


# ---------------------------------------------------------------- pairing

def test_pairing_same_day_and_window_edge():
    samples = [sample(0), sample(20)]
    pairs = pair_assessments(samples, [odi(0), odi(7), odi(8)], window_days=7)
    assert [(p.sample_date, p.day_gap) for p in pairs] == [(day(0), 0), (day(0), -7)]


def test_pairing_tie_goes_to_earlier_day():
    samples = [sample(8), sample(12)]
    (p,) = pair_assessments(samples, [odi(10)])
    assert p.sample_date == day(8) and p.day_gap == -2


def test_pairing_nearest_wins_and_pid_scoped():
    samples = [sample(3), sample(9), sample(10, pid="p2")]
    pairs = pair_assessments(samples, [odi(8), odi(8, pid="p3")])
    assert len(pairs) == 1 and pairs[0].sample_date == day(9) and pairs[0].day_gap == 1


@settings(max_examples=60, deadline=None)
@given(st.sets(st.integers(0, 60), min_size=1, max_size=20), st.integers(-5, 65), st.integers(0, 10))
def test_pairing_matches_brute_force(days, t, window):
    samples = [sample(i) for i in sorted(days)]
    pairs = pair_assessments(samples, [odi(t)], window_days=window)
    near = [i for i in days if abs(i - t) <= window]
    if not near:
        assert pairs == []
        return
    best = min(near, key=lambda i: (abs(i - t), i))
    assert pairs[0].sample_date == day(best)


# ---------------------------------------------------------------- distances

def _model(C, names=("pain", "mood"), ranking=None):
    C = np.asarray(C, dtype=float)
    return ClusterModel(k=len(C), centroids=C, feature_names=list(names), seed=0, wcss=0.0, ranking=ranking)


def test_centroid_distances_hand_values():
    m = _model([[0, 0], [3, 4]])
    v = FeatureVector("p", D0, {"mood": 0.0, "pain": 0.0, "extra": 9.0})
    assert centroid_distances(m, v).tolist() == [0.0, 5.0]
    assert centroid_distances(m, [3.0, 0.0]).tolist() == [3.0, 4.0]


def test_centroid_distances_dimension_checks():
    m = _model([[0, 0], [3, 4]])
    with pytest.raises(DimensionError):
        centroid_distances(m, FeatureVector("p", D0, {"pain": 1.0}))
    with pytest.raises(DimensionError):
        centroid_distances(m, [1.0, 2.0, 3.0])


def test_distance_samples_agree_with_scipy_cdist():
    from scipy.spatial.distance import cdist

    rng = np.random.default_rng(0)
    C = rng.normal(size=(4, 3))
    X = rng.normal(size=(10, 3))
    m = _model(C, names=("a", "b", "c"))
    vecs = [FeatureVector("p", day(i), dict(zip("abc", x))) for i, x in enumerate(X)]
    got = np.array([s.distances for s in distance_samples(m, vecs)])
    assert np.allclose(got, cdist(X, C))


# ---------------------------------------------------------------- correlation

def test_correlate_perfect():
    x = np.arange(10.0)
    assert correlate(x, 2 * x + 1)[0] == 1.0
    assert correlate(x, -x)[0] == -1.0


def test_correlate_hand_t_transform():
    x = np.array([1, 2, 3, 4, 5, 6, 7, 8, 9, 10], dtype=float)
    y = np.array([2, 1, 4, 3, 7, 5, 6, 9, 8, 10], dtype=float)
    xc, yc = x - x.mean(), y - y.mean()
    r = (xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc))
    t = r * np.sqrt(8 / (1 - r * r))
    p = 2 * stats.t.sf(abs(t), 8)
    got_r, got_p = correlate(x, y)
    assert got_r == pytest.approx(r, abs=1e-14)
    assert got_p == pytest.approx(p, rel=1e-10)
    ref = stats.pearsonr(x, y)
    assert got_r == pytest.approx(ref.statistic) and got_p == pytest.approx(ref.pvalue)


def test_correlate_undefined_cases():
    with pytest.raises(UndefinedScoreError):
        correlate([1, 2], [3, 4])
    with pytest.raises(UndefinedScoreError):
        correlate([1, 1, 1], [1, 2, 3])
    with pytest.raises(DimensionError):
        correlate([1, 2, 3], [1, 2])


def test_permutation_floor_and_zero_permutations():
    x = np.arange(30.0)
    assert permutation_test(x, x, n_perm=999, seed=1) == pytest.approx(1 / 1000)
    assert permutation_test(x, x, n_perm=0) == 1.0


def test_permutation_is_seeded():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=40), rng.normal(size=40)
    assert permutation_test(x, y, 500, seed=7) == permutation_test(x, y, 500, seed=7)
    assert permutation_test(x, y, 500, seed=7, batch=37) == permutation_test(x, y, 500, seed=7, batch=37)


def test_permutation_agrees_with_scipy_in_distribution():
    rng = np.random.default_rng(4)
    x = rng.normal(size=30)
    y = 0.3 * x + rng.normal(size=30)
    ours = permutation_test(x, y, n_perm=4000, seed=2)
    ref = stats.permutation_test(
        (y,), lambda yy: stats.pearsonr(x, yy).statistic, permutation_type="pairings",
        n_resamples=4000, random_state=np.random.default_rng(9),
    ).pvalue
    assert abs(ours - ref) < 0.02


# ---------------------------------------------------------------- validate_states and ranking

def _mirrored_cohort(n=60, seed=0):
    """Two states on a 1-D pain axis; ODI and VAS track the position."""
    rng = np.random.default_rng(seed)
    model = _model([[0.2], [0.8]], names=("pain",))
    pos = rng.uniform(0, 1, n)
    samples = [DistanceSample("p", day(i), np.abs(model.centroids[:, 0] - pos[i])) for i in range(n)]
    assess = []
    for i in range(n):
        assess.append(AssessmentRecord("p", day(i), "ODI", 100 * pos[i] + rng.normal(0, 5)))
        assess.append(AssessmentRecord("p", day(i), "EQ5D_VAS_HEALTH", 100 * (1 - pos[i]) + rng.normal(0, 5)))
    return model, pair_assessments(samples, assess)


def test_mirrored_signs_for_two_states():
    model, pairs = _mirrored_cohort()
    rep = validate_states(model, pairs, n_perm=999, seed=0)
    r = rep.r_matrix(("ODI", "EQ5D_VAS_HEALTH"))
    assert r[0, 0] > 0 and r[0, 1] < 0  # far from the good state: worse ODI, lower VAS
    assert r[1, 0] < 0 and r[1, 1] > 0
    assert rep.ordinal_labels == ["A", "B"]
    assert all(c.p_permutation < 0.05 for c in rep.cells)
    assert set(rep.excluded_instruments) == set()


def test_validate_states_thread_and_order_independent():
    model, pairs = _mirrored_cohort(seed=1)
    a = validate_states(model, pairs, n_perm=300, seed=5, threads=1)
    b = validate_states(model, list(reversed(pairs)), n_perm=300, seed=5, threads=3)
    assert [c.p_permutation for c in a.cells] == [c.p_permutation for c in b.cells]


def test_validate_states_excludes_sparse_instrument(caplog):
    model, pairs = _mirrored_cohort(n=10)
    extra = pair_assessments([DistanceSample("p", day(0), np.array([0.1, 0.5]))],
                             [AssessmentRecord("p", day(0), "EQ5D_PAIN", 2.0)])
    rep = validate_states(model, pairs + extra, n_perm=50)
    assert rep.excluded_instruments == ["EQ5D_PAIN"]
    assert rep.cell(0, "EQ5D_PAIN") is None
    assert "EQ5D_PAIN" in caplog.text


def _report(rs, instruments=("ODI", "EQ5D_VAS_HEALTH")):
    cells = [
        CellResult(s, inst, r, 0.01, 0.01, 50)
        for s, row in enumerate(rs)
        for inst, r in zip(instruments, row)
    ]
    return ValidationReport(k=len(rs), cells=cells)


def test_ranking_score_is_orientation_signed_mean():
    rep = _report([[0.4, -0.2], [-0.3, 0.5]])
    assert ranking_scores(rep) == pytest.approx([0.3, -0.4])
    assert rank_states(rep) == ["A", "B"]


def test_rank_tie_broken_by_pain_then_index():
    rep = _report([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    assert rank_states(rep, pain=[0.5, 0.1, 0.3]) == ["C", "A", "B"]
    assert rank_states(rep) == ["A", "B", "C"]


def test_nan_score_ranks_last():
    rep = _report([[np.nan, np.nan], [0.1, -0.1]])
    assert rank_states(rep) == ["B", "A"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=2, max_size=8, unique=True))
def test_rank_labels_are_a_permutation_sorted_by_score(rows):
    rep = _report([list(r) for r in rows])
    labels = rank_states(rep)
    assert sorted(labels) == state_labels(len(rows))
    scores = ranking_scores(rep)
    by_label = [scores[labels.index(c)] for c in state_labels(len(rows))]
    assert all(round(a, 12) >= round(b, 12) for a, b in zip(by_label, by_label[1:]))


def test_rank_invariant_to_positive_scaling():
    rng = np.random.default_rng(6)
    rs = rng.uniform(-0.5, 0.5, (5, 2))
    assert rank_states(_report(rs)) == rank_states(_report(rs * 0.5))


def test_state_labels_limit():
    assert state_labels(3) == ["A", "B", "C"]
    with pytest.raises(UndefinedScoreError):
        state_labels(27)


def test_report_round_trip_and_ranked_model():
    model, pairs = _mirrored_cohort()
    rep = validate_states(model, pairs, n_perm=99)
    back = ValidationReport.from_dict(rep.to_dict())
    assert back.to_dict() == rep.to_dict()
    ranked = ranked_model(model, rep)
    assert ranked.ranking == rep.ordinal_labels
    assert np.array_equal(ranked.centroids, model.centroids)


# ---------------------------------------------------------------- file format

def test_assessment_csv_round_trip():
    recs = [odi(0, 12.5), AssessmentRecord("p2", day(3), "EQ5D_VAS_HEALTH", 70.0)]
    buf = io.StringIO()
    write_assessments(buf, recs)
    buf.seek(0)
    assert read_assessments(buf) == recs


def test_assessment_csv_errors():
    with pytest.raises(SchemaError):
        read_assessments(io.StringIO("pid,date,instrument,score\n"))
    with pytest.raises(SchemaError) as exc:
        read_assessments(io.StringIO("participant_id,date,instrument,score\np,2021-01-01,SF36,3\n"))
    assert exc.value.line == 2
    with pytest.raises(ParseError) as exc:
        read_assessments(io.StringIO("participant_id,date,instrument,score\np,2021-01-01,ODI,x\n"))
    assert exc.value.line == 2
