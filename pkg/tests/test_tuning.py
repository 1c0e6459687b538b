import warnings

import numpy as np
import pytest

from excel_ood import clm, metrics, scoring, synth, tuning
from excel_ood.errors import ConfigError


def planted_scenario():
    model = synth.SignatureModel.ring(
        num_classes=16, depth=4, signal_strength=2.0, noise_scale=1.0, seed=5
    )
    train = synth.gen_id(model, 3000)
    val_id = synth.gen_id(model, 800, seed=1001)
    val_ood = synth.gen_ood(model, 800, "flat_ood", seed=2002)
    return train, val_id, val_ood


def test_grid_spec_validation():
    with pytest.raises(ConfigError):
        tuning.GridSpec(a_values=())
    with pytest.raises(ConfigError):
        tuning.GridSpec(a_values=(0.5,))
    with pytest.raises(ConfigError):
        tuning.GridSpec(alpha_values=(1.5,))
    with pytest.raises(ConfigError):
        tuning.GridSpec(objective="loss")
    with pytest.raises(ConfigError):
        tuning.GridSpec.from_dict({})
    with pytest.raises(ConfigError):
        tuning.GridSpec.from_dict({"gamma": [1]})


def test_grid_spec_from_dict():
    grid = tuning.GridSpec.from_dict(
        {"a": [2, 10], "b": [3], "alpha": [0.0, 1.0], "objective": "near_auroc"}
    )
    assert grid.a_values == (2.0, 10.0)
    assert grid.b_values == (3.0,)
    assert grid.objective == "near_auroc"


def test_default_grid_contains_reference_optimum():
    grid = tuning.GridSpec()
    assert 10.0 in grid.a_values and 5.0 in grid.b_values and 0.8 in grid.alpha_values
    assert len(grid.a_values) * len(grid.b_values) * len(grid.alpha_values) == 176


def test_single_point_grid_returns_it():
    train, val_id, val_ood = planted_scenario()
    grid = tuning.GridSpec(a_values=(10.0,), b_values=(5.0,), alpha_values=(0.8,))
    res = tuning.tune(train.logits, train.labels, val_id.logits, val_ood.logits, grid)
    assert res.best == (10.0, 5.0, 0.8)
    assert len(res.trace) == 1
    assert res.trace[0][1] == res.objective_value


def test_trace_length_is_grid_product():
    train, val_id, val_ood = planted_scenario()
    grid = tuning.GridSpec(a_values=(2.0, 10.0), b_values=(2.0, 5.0), alpha_values=(0.0, 0.5, 1.0))
    res = tuning.tune(train.logits, train.labels, val_id.logits, val_ood.logits, grid)
    assert len(res.trace) == 12


def test_fit_reused_across_alphas():
    train, val_id, val_ood = planted_scenario()
    calls = []

    def counting_fit(logits, labels, params):
        calls.append((params.a, params.b))
        return clm.fit(logits, labels, params)

    grid = tuning.GridSpec(a_values=(2.0, 10.0), b_values=(2.0, 5.0))
    tuning.tune(
        train.logits, train.labels, val_id.logits, val_ood.logits, grid, fit_fn=counting_fit
    )
    assert len(calls) == 4
    assert len(set(calls)) == 4


def test_flat_ood_scenario_selects_pure_rank_score():
    train, val_id, val_ood = planted_scenario()
    grid = tuning.GridSpec(a_values=(2.0, 10.0), b_values=(2.0, 5.0))
    res = tuning.tune(train.logits, train.labels, val_id.logits, val_ood.logits, grid)
    assert res.best[2] == 1.0

    # exhaustive independent re-evaluation confirms the argmax
    best_value, best_params = -np.inf, None
    for a in grid.a_values:
        for b in grid.b_values:
            fitted = clm.fit(train.logits, train.labels, clm.SmoothingParams(a=a, b=b))
            for alpha in grid.alpha_values:
                params = scoring.ExcelParams(alpha=alpha)
                ids = scoring.score_matrix(val_id.logits, "excel", clm_set=fitted, excel_params=params)
                oods = scoring.score_matrix(val_ood.logits, "excel", clm_set=fitted, excel_params=params)
                value = metrics.auroc(ids, oods)
                if value > best_value:
                    best_value, best_params = value, (a, b, alpha)
    assert res.best == best_params
    assert res.objective_value == best_value


def test_objective_value_reproducible():
    train, val_id, val_ood = planted_scenario()
    grid = tuning.GridSpec(a_values=(10.0,), b_values=(2.0,), alpha_values=(0.3, 0.9))
    res = tuning.tune(train.logits, train.labels, val_id.logits, val_ood.logits, grid)
    a, b, alpha = res.best
    fitted = clm.fit(train.logits, train.labels, clm.SmoothingParams(a=a, b=b))
    params = scoring.ExcelParams(alpha=alpha)
    ids = scoring.score_matrix(val_id.logits, "excel", clm_set=fitted, excel_params=params)
    oods = scoring.score_matrix(val_ood.logits, "excel", clm_set=fitted, excel_params=params)
    assert metrics.auroc(ids, oods) == res.objective_value


def test_tie_break_prefers_small_alpha_then_a_then_b():
    # with no correctly classified training samples every CLM is uniform,
    # so all alpha < 1 grid points share the max-logit AUROC exactly
    rng = np.random.default_rng(0)
    n, c = 60, 5
    train_logits = rng.normal(size=(n, c))
    train_labels = (train_logits.argmax(axis=1) + 1) % c  # never correct
    val_id = rng.normal(loc=2.0, size=(100, c))
    val_ood = rng.normal(loc=0.0, size=(80, c))
    grid = tuning.GridSpec(
        a_values=(5.0, 2.0), b_values=(3.0, 2.0), alpha_values=(0.5, 0.0, 1.0)
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = tuning.tune(train_logits, train_labels, val_id, val_ood, grid)
    assert res.best == (2.0, 2.0, 0.0)
    tied = [v for _, v in res.trace if v == res.objective_value]
    assert len(tied) == 8


def test_fpr_objective_negated():
    train, val_id, val_ood = planted_scenario()
    grid = tuning.GridSpec(
        a_values=(10.0,), b_values=(2.0,), alpha_values=(0.0, 1.0),
        objective="overall_fpr95_negated",
    )
    res = tuning.tune(train.logits, train.labels, val_id.logits, val_ood.logits, grid)
    fitted = clm.fit(train.logits, train.labels, clm.SmoothingParams(a=10.0, b=2.0))
    for (a, b, alpha), value in res.trace:
        params = scoring.ExcelParams(alpha=alpha)
        ids = scoring.score_matrix(val_id.logits, "excel", clm_set=fitted, excel_params=params)
        oods = scoring.score_matrix(val_ood.logits, "excel", clm_set=fitted, excel_params=params)
        assert value == -metrics.fpr_at_tpr(ids, oods)


def test_result_serializes():
    train, val_id, val_ood = planted_scenario()
    grid = tuning.GridSpec(a_values=(10.0,), b_values=(5.0,), alpha_values=(0.8,))
    res = tuning.tune(train.logits, train.labels, val_id.logits, val_ood.logits, grid)
    payload = res.to_dict()
    assert payload["best"] == {"a": 10.0, "b": 5.0, "alpha": 0.8}
    assert payload["trace"][0]["objective_value"] == res.objective_value
