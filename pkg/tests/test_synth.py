import numpy as np
import pytest
from scipy.stats import ks_2samp

from excel_ood import clm, metrics, ranking, scoring, synth
from excel_ood.errors import ConfigError, EmptyBatch


def ring(s=10.0, seed=42, c=8):
    return synth.SignatureModel.ring(
        num_classes=c, depth=3, signal_strength=s, noise_scale=1.0, seed=seed
    )


def test_bit_identical_reruns():
    model = ring()
    a = synth.gen_id(model, 50)
    b = synth.gen_id(model, 50)
    assert a.logits.values.tobytes() == b.logits.values.tobytes()
    np.testing.assert_array_equal(a.labels.labels, b.labels.labels)
    for regime in ("sparse_ood", "uniform_ood", "flat_ood"):
        x = synth.gen_ood(model, 50, regime)
        y = synth.gen_ood(model, 50, regime)
        assert x.logits.values.tobytes() == y.logits.values.tobytes()
        assert x.labels is None


def test_seed_changes_output():
    model = ring()
    a = synth.gen_id(model, 50)
    b = synth.gen_id(model, 50, seed=43)
    assert a.logits.values.tobytes() != b.logits.values.tobytes()


def test_prefix_stability():
    # sample i depends only on (seed, i), not on the batch size
    model = ring()
    small = synth.gen_id(model, 20).logits.values
    large = synth.gen_id(model, 60).logits.values
    np.testing.assert_array_equal(small, large[:20])


def test_regimes_are_decorrelated():
    # ID and OOD batches from the same seed use disjoint key streams
    model = ring(s=0.0)
    u = synth.gen_ood(model, 200, "uniform_ood").logits.values
    i = synth.gen_id(model, 200).logits.values
    assert abs(np.corrcoef(u.ravel(), i.ravel())[0, 1]) < 0.1


def test_empty_batch_rejected():
    model = ring()
    with pytest.raises(EmptyBatch):
        synth.gen_id(model, 0)
    with pytest.raises(EmptyBatch):
        synth.gen_ood(model, 0, "uniform_ood")


def test_unknown_regime_rejected():
    with pytest.raises(ConfigError):
        synth.gen_ood(ring(), 10, "alien_ood")


def test_model_validation():
    with pytest.raises(ConfigError):
        synth.SignatureModel(
            num_classes=3,
            neighbor_map=((1,), (1,), (0,)),  # class 1 lists itself
            signal_strength=1.0,
            noise_scale=1.0,
            seed=0,
        )
    with pytest.raises(ConfigError):
        synth.SignatureModel(
            num_classes=3,
            neighbor_map=((1,), (0,)),  # wrong length
            signal_strength=1.0,
            noise_scale=1.0,
            seed=0,
        )


def test_model_json_round_trip(tmp_path):
    model = ring()
    path = tmp_path / "model.json"
    import json

    path.write_text(json.dumps(model.to_dict()))
    back = synth.SignatureModel.from_json_file(path)
    assert back == model


def test_no_signature_gives_uniform_clm():
    # s=0: among correctly classified samples the non-top ranks are
    # exchangeable, so each per-class CLM converges to the uniform one
    model = ring(s=0.0, seed=7)
    batch = synth.gen_id(model, 5000)
    for cls in range(model.num_classes):
        built = clm.build_clm(batch.logits, batch.labels, cls)
        assert not built.is_fallback
        tail = np.delete(built.probs[:, 1:], cls, axis=0)
        bound = 3.0 / np.sqrt(built.support_count)
        assert np.abs(tail - 1.0 / (model.num_classes - 1)).max() < bound


def test_strong_signature_concentrates_first_neighbor():
    model = ring(s=10.0, seed=42)
    batch = synth.gen_id(model, 2000)
    perms = ranking.rank_classes_matrix(batch.logits.values)
    first = np.array([model.neighbor_map[c][0] for c in batch.labels.labels])
    p = float(np.mean(perms[:, 1] == first))
    assert p > 0.5
    assert p == pytest.approx(0.862, abs=1e-12)  # pinned from the first seeded run


def test_uniform_ood_class_at_rank_frequencies():
    model = ring()
    n, c = 5000, model.num_classes
    batch = synth.gen_ood(model, n, "uniform_ood")
    perms = ranking.rank_classes_matrix(batch.logits.values)
    freq = np.zeros((c, c))
    np.add.at(freq, (perms.ravel(), np.tile(np.arange(c), n)), 1.0)
    freq /= n
    assert np.abs(freq - 1.0 / c).max() < 3.0 / np.sqrt(n)


def test_sparse_subset_one_rank2_uniform():
    model = ring()
    n, c = 5000, model.num_classes
    batch = synth.gen_ood(model, n, "sparse_ood", subset_size=1)
    perms = ranking.rank_classes_matrix(batch.logits.values)
    r1, r2 = perms[:, 0], perms[:, 1]
    cond = np.zeros((c, c))
    np.add.at(cond, (r1, r2), 1.0)
    for cls in range(c):
        total = cond[cls].sum()
        assert cond[cls, cls] == 0
        others = np.delete(cond[cls], cls) / total
        assert np.abs(others - 1.0 / (c - 1)).max() < 3.0 / np.sqrt(total)


def test_sparse_subset_size_validation():
    with pytest.raises(ConfigError):
        synth.gen_ood(ring(), 10, "sparse_ood", subset_size=0)
    with pytest.raises(ConfigError):
        synth.gen_ood(ring(), 10, "sparse_ood", subset_size=8)


def test_uniform_rank_scores_match_random_permutations():
    model = ring(s=10.0, seed=42)
    train = synth.gen_id(model, 2000)
    fitted = clm.fit(train.logits, train.labels, clm.SmoothingParams(a=10, b=5))

    n, c = 5000, model.num_classes
    uniform = synth.gen_ood(model, n, "uniform_ood")
    rs_uniform = scoring.score_matrix(uniform.logits, "rankscore", clm_set=fitted).scores

    rng = np.random.default_rng(99)
    perm_logits = np.empty((n, c))
    for i in range(n):
        perm_logits[i, rng.permutation(c)] = -np.arange(c, dtype=float)
    rs_perm = scoring.score_matrix(perm_logits, "rankscore", clm_set=fitted).scores

    stat = ks_2samp(rs_uniform, rs_perm).statistic
    critical = 1.628 * np.sqrt(2.0 * n / (n * n))
    assert stat < critical


def test_flat_ood_matches_id_max_logit_distribution():
    model = ring(s=10.0, seed=42)
    flat = synth.gen_ood(model, 5000, "flat_ood")
    id_batch = synth.gen_id(model, 5000, seed=1234)
    ml_flat = flat.logits.values.max(axis=1)
    ml_id = id_batch.logits.values.max(axis=1)
    assert ks_2samp(ml_flat, ml_id).statistic < 0.05
    assert abs(metrics.auroc(ml_id, ml_flat) - 50.0) < 2.0
    # the per-sample shift preserves order, so rankings stay exchangeable
    perms = ranking.rank_classes_matrix(flat.logits.values)
    top_freq = np.bincount(perms[:, 0], minlength=model.num_classes) / 5000.0
    assert np.abs(top_freq - 1.0 / model.num_classes).max() < 3.0 / np.sqrt(5000)
