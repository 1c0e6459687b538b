import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from excel_ood import metrics
from excel_ood.errors import EmptyInput, ExcelOodWarning
from excel_ood.metrics import DetectionReport, MetricPair


def pairwise_auroc_oracle(ids, oods):
    """O(N^2) pairwise count: wins plus half credit for ties, in percent."""
    ids, oods = np.asarray(ids, dtype=float), np.asarray(oods, dtype=float)
    wins = 0.0
    for i in ids:
        for o in oods:
            if i > o:
                wins += 1.0
            elif i == o:
                wins += 0.5
    return 100.0 * wins / (ids.size * oods.size)


def sweep_fpr_oracle(ids, oods, target=0.95):
    """Exhaustive threshold sweep over all observed score values plus +inf."""
    ids, oods = np.asarray(ids, dtype=float), np.asarray(oods, dtype=float)
    candidates = np.concatenate([np.unique(np.concatenate([ids, oods])), [np.inf]])
    best = None
    for lam in candidates:
        tpr = np.count_nonzero(ids >= lam) / ids.size
        if tpr >= target and (best is None or lam > best):
            best = lam
    return 100.0 * np.count_nonzero(oods >= best) / oods.size


def test_auroc_hand_cases():
    assert metrics.auroc([2.0, 3.0], [0.0, 1.0]) == 100.0
    assert metrics.auroc([1.0, 3.0], [2.0]) == 50.0
    assert metrics.auroc([1.0], [1.0]) == 50.0


def test_auroc_empty_rejected():
    with pytest.raises(EmptyInput):
        metrics.auroc([], [1.0])
    with pytest.raises(EmptyInput):
        metrics.auroc([1.0], [])


def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(21)
    for _ in range(30):
        n_id, n_ood = rng.integers(1, 60, size=2)
        ids = np.round(rng.normal(size=n_id), 1)  # rounding forces ties
        oods = np.round(rng.normal(size=n_ood), 1)
        fast = metrics.auroc(ids, oods)
        slow = pairwise_auroc_oracle(ids, oods)
        assert fast == pytest.approx(slow, abs=1e-12)


def test_auroc_complement_is_exact():
    rng = np.random.default_rng(22)
    cases = [
        (np.array([1.0]), np.array([0.0, 2.0, 2.0])),  # quotient 1/3
        (np.array([0.5, 0.5]), np.array([0.5])),
    ]
    for _ in range(50):
        n_id, n_ood = rng.integers(1, 40, size=2)
        cases.append((np.round(rng.normal(size=n_id), 1), np.round(rng.normal(size=n_ood), 1)))
    for ids, oods in cases:
        assert metrics.auroc(ids, oods) + metrics.auroc(oods, ids) == 100.0


def test_auroc_monotone_transform_invariance():
    rng = np.random.default_rng(23)
    ids, oods = rng.normal(size=30), rng.normal(size=25)

    for transform in (lambda x: 3.0 * np.asarray(x) + 7.0, lambda x: np.asarray(x) ** 3):
        assert metrics.auroc(ids, oods) == metrics.auroc(transform(ids), transform(oods))


def test_fpr_hand_cases():
    ids = np.arange(1.0, 21.0)
    assert metrics.fpr_at_tpr(ids, [0.0, 1.0, 3.0]) == pytest.approx(100.0 / 3.0)
    assert metrics.fpr_at_tpr([5.0, 6.0], [0.0]) == 0.0
    assert metrics.fpr_at_tpr([1.0, 2.0], [5.0, 6.0]) == 100.0


def test_fpr_matches_sweep_oracle_exactly():
    rng = np.random.default_rng(24)
    for _ in range(30):
        n_id, n_ood = rng.integers(1, 60, size=2)
        ids = np.round(rng.normal(size=n_id), 1)
        oods = np.round(rng.normal(size=n_ood), 1)
        for target in (0.5, 0.8, 0.95, 1.0):
            assert metrics.fpr_at_tpr(ids, oods, target) == sweep_fpr_oracle(
                ids, oods, target
            )


def test_fpr_monotone_in_target():
    rng = np.random.default_rng(25)
    ids, oods = rng.normal(size=50), rng.normal(size=40)
    targets = np.linspace(0.05, 1.0, 20)
    values = [metrics.fpr_at_tpr(ids, oods, t) for t in targets]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_fpr_rejects_bad_target():
    with pytest.raises(EmptyInput):
        metrics.fpr_at_tpr([1.0], [0.0], 0.0)
    with pytest.raises(EmptyInput):
        metrics.fpr_at_tpr([1.0], [0.0], 1.5)


def _scores(ids_mean, n, rng):
    return rng.normal(loc=ids_mean, size=n)


def test_evaluate_group_means():
    rng = np.random.default_rng(26)
    id_scores = _scores(3.0, 400, rng)
    ood = {"near1": _scores(1.8, 300, rng), "far1": _scores(0.0, 300, rng)}
    groups = {"near1": "near", "far1": "far"}
    report = metrics.evaluate("maxlogit", id_scores, ood, groups)
    assert report.overall.auroc == pytest.approx(
        (report.near.auroc + report.far.auroc) / 2.0
    )
    assert report.overall.fpr95 == pytest.approx(
        (report.near.fpr95 + report.far.fpr95) / 2.0
    )
    assert set(report.per_dataset) == {"near1", "far1"}


def test_evaluate_simple_mean():
    # one near set at AUROC 80, one far at 90: overall is 85
    report = DetectionReport(
        method="m",
        per_dataset={},
        near=MetricPair(80.0, 40.0),
        far=MetricPair(90.0, 20.0),
        overall=MetricPair(85.0, 30.0),
    )
    assert (report.near.auroc + report.far.auroc) / 2.0 == report.overall.auroc


def test_overall_matches_published_aggregation():
    near, far = 80.70, 82.04
    assert (near + far) / 2.0 == pytest.approx(81.37)


def test_evaluate_empty_far_group_warns_and_omits():
    rng = np.random.default_rng(27)
    id_scores = _scores(2.0, 100, rng)
    ood = {"near1": _scores(0.0, 80, rng)}
    with pytest.warns(ExcelOodWarning):
        report = metrics.evaluate("msp", id_scores, ood, {"near1": "near"})
    assert report.far is None and report.overall is None
    assert report.near is not None


def _report(method, overall_auroc, overall_fpr):
    return DetectionReport(
        method=method,
        per_dataset={},
        near=MetricPair(overall_auroc, overall_fpr),
        far=MetricPair(overall_auroc, overall_fpr),
        overall=MetricPair(overall_auroc, overall_fpr),
    )


def test_rank_methods_published_row():
    # overall AUROC rank 2 plus overall FPR95 rank 1 gives mean rank 1.5
    reports = {
        "rmds": _report("rmds", 81.54, 54.14),
        "react": _report("react", 80.58, 55.30),
        "excel": _report("excel", 81.37, 53.73),
    }
    table = metrics.rank_methods(reports)
    assert table.overall_auroc_rank["excel"] == 2.0
    assert table.overall_fpr95_rank["excel"] == 1.0
    assert table.mean_overall_rank["excel"] == 1.5


def test_rank_methods_ties_average():
    reports = {"a": _report("a", 90.0, 20.0), "b": _report("b", 90.0, 20.0)}
    table = metrics.rank_methods(reports)
    assert table.overall_auroc_rank == {"a": 1.5, "b": 1.5}
    assert table.mean_overall_rank == {"a": 1.5, "b": 1.5}


def test_rank_methods_opposed_ranks():
    reports = {
        "x": _report("x", 92.0, 30.0),
        "y": _report("y", 91.0, 20.0),
        "z": _report("z", 90.0, 10.0),
    }
    table = metrics.rank_methods(reports)
    assert table.mean_overall_rank == {"x": 2.0, "y": 2.0, "z": 2.0}


def test_report_and_table_serialize(tmp_path):
    reports = {
        "a": _report("a", 90.0, 20.0),
        "b": _report("b", 85.0, 25.0),
    }
    table = metrics.rank_methods(reports)
    blob = json.dumps(table.to_dict())
    assert json.loads(blob)["mean_overall_rank"]["a"] == 1.0
    rep = json.loads(json.dumps(reports["a"].to_dict()))
    assert rep["method"] == "a"
    assert rep["overall"] == {"auroc": 90.0, "fpr95": 20.0}
    text = metrics.render_rank_table(reports, table)
    assert "Mean Rank" in text and "90.00" in text


ties_scores = st.lists(
    st.integers(-5, 5).map(float), min_size=1, max_size=30
)


@settings(max_examples=60, deadline=None)
@given(ties_scores, ties_scores)
def test_auroc_complement_property(ids, oods):
    assert metrics.auroc(ids, oods) + metrics.auroc(oods, ids) == 100.0


@settings(max_examples=60, deadline=None)
@given(ties_scores, ties_scores)
def test_auroc_oracle_property(ids, oods):
    assert metrics.auroc(ids, oods) == pytest.approx(
        pairwise_auroc_oracle(ids, oods), abs=1e-12
    )
