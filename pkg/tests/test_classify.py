import numpy as np
import pytest

from gridscout.classify import (FEATURE_ORDER, LinearModel, average_precision,
                                extract_features, features_matrix, load_model,
                                logreg_loss, permutation_importance,
                                predict_scores, roc_auc, save_model,
                                train_forest, train_logreg)
from gridscout.squares import RotatedRect, SquareCrop

from conftest import as_image


def make_crop(data, width=None, height=None) -> SquareCrop:
    data = np.asarray(data, dtype=np.float64)
    h, w = data.shape
    rect = RotatedRect(center=(w / 2, h / 2),
                       width=float(width if width is not None else w),
                       height=float(height if height is not None else h),
                       theta=0.0)
    return SquareCrop(pixels=as_image(data), source_rect=rect,
                      image_id="test", label=None)


def ranking_data(rng, n=200, sep=3.0):
    """Two gaussian clouds in 3 features, labels by cloud."""
    y = (rng.random(n) < 0.5).astype(float)
    X = rng.normal(0.0, 1.0, (n, 3))
    X[:, 0] += sep * y
    X[:, 1] -= 0.5 * sep * y
    return X, y


# ---------------------------------------------------------------------------
# features


def test_feature_values_two_by_two():
    fv = extract_features(make_crop([[1.0, 3.0], [3.0, 1.0]]))
    assert fv.to_array() == pytest.approx([2.0, 3.0, 1.0, 1.0, 0.0, -2.0, 4.0])


def test_features_constant_crop():
    fv = extract_features(make_crop(np.full((4, 4), 7.0)))
    assert (fv.variance, fv.skew, fv.kurtosis) == (0.0, 0.0, 0.0)
    assert fv.mean == fv.max == fv.min == 7.0


def test_features_invariant_to_pixel_order(rng):
    data = rng.random((6, 6))
    a = extract_features(make_crop(data)).to_array()
    b = extract_features(make_crop(np.rot90(data).copy(), width=6,
                                   height=6)).to_array()
    assert a == pytest.approx(b.tolist(), rel=1e-12)


def test_feature_area_uses_rect_not_pixels():
    fv = extract_features(make_crop(np.ones((4, 4)), width=10.5, height=3.0))
    assert fv.area == pytest.approx(31.5)


def test_features_matrix_polymorphic(rng):
    crop = make_crop(rng.random((3, 3)))
    fv = extract_features(crop)
    row = fv.to_array()
    M = features_matrix([crop, fv, row])
    assert M.shape == (3, len(FEATURE_ORDER))
    assert np.allclose(M[0], M[1])
    assert np.array_equal(M[1], M[2])


# ---------------------------------------------------------------------------
# logistic regression


def test_logreg_separable_perfect_auc(rng):
    X, y = ranking_data(rng, n=100, sep=6.0)
    model = train_logreg(X, y)
    assert roc_auc(predict_scores(model, X), y) == 1.0


def test_logreg_beats_parameter_grid(rng):
    X, y = ranking_data(rng, n=60, sep=2.0)
    X = X[:, :2]
    model = train_logreg(X, y)
    trained = logreg_loss(model, X, y)
    grid = np.linspace(-3.0, 3.0, 21)
    best = np.inf
    for w0 in grid:
        for w1 in grid:
            for b in grid:
                probe = LinearModel(weights=np.array([w0, w1]), bias=float(b),
                                    feature_means=model.feature_means,
                                    feature_stds=model.feature_stds)
                best = min(best, logreg_loss(probe, X, y))
    assert trained <= best + 1e-6


def test_logreg_label_flip_negates_parameters(rng):
    X, y = ranking_data(rng, n=80)
    a = train_logreg(X, y, epochs=500)
    b = train_logreg(X, 1.0 - y, epochs=500)
    assert a.weights == pytest.approx((-b.weights).tolist(), abs=1e-10)
    assert a.bias == pytest.approx(-b.bias, abs=1e-10)


def test_logreg_loss_never_increases_with_budget(rng):
    X, y = ranking_data(rng, n=120, sep=1.0)
    losses = [logreg_loss(train_logreg(X, y, epochs=e), X, y)
              for e in (5, 50, 500, 5000)]
    assert all(l2 <= l1 + 1e-12 for l1, l2 in zip(losses, losses[1:]))


def test_logreg_single_class_errors(rng):
    X = rng.random((10, 3))
    with pytest.raises(ValueError):
        train_logreg(X, np.ones(10))


def test_logreg_constant_feature_is_harmless(rng):
    X, y = ranking_data(rng, n=60)
    X = np.hstack([X, np.full((60, 1), 4.0)])
    model = train_logreg(X, y, epochs=200)
    assert np.all(np.isfinite(model.weights))
    assert np.all(np.isfinite(predict_scores(model, X)))


def test_predict_zero_weights_gives_half(rng):
    model = LinearModel(weights=np.zeros(3), bias=0.0,
                        feature_means=np.zeros(3), feature_stds=np.ones(3))
    assert np.all(predict_scores(model, rng.random((5, 3))) == 0.5)


def test_predict_dimension_mismatch_errors(rng):
    model = LinearModel(weights=np.zeros(3), bias=0.0,
                        feature_means=np.zeros(3), feature_stds=np.ones(3))
    with pytest.raises(ValueError):
        predict_scores(model, rng.random((5, 4)))


def test_logreg_scores_monotone_in_planted_feature(rng):
    area = rng.uniform(1.0, 100.0, 300)
    X = np.column_stack([rng.normal(0, 1, 300), area])
    y = (area > 50.0).astype(float)
    model = train_logreg(X, y)
    # holding the noise feature fixed, bigger area must score higher
    probe = np.column_stack([np.zeros(50), np.linspace(1, 100, 50)])
    s = predict_scores(model, probe)
    assert np.all(np.diff(s) >= 0)  # sigmoid may saturate at the ends
    assert s[-1] > 0.9 > 0.1 > s[0]


# ---------------------------------------------------------------------------
# decision forest


def test_forest_learns_threshold_rule(rng):
    X = rng.uniform(0.0, 6.0, (400, 2))
    y = (X[:, 0] > 3.0).astype(float)
    model = train_forest(X, y, tree_count=20, seed=1)
    pred = predict_scores(model, X) > 0.5
    assert (pred == (y > 0)).mean() >= 0.99


def test_forest_same_seed_identical(rng):
    X, y = ranking_data(rng, n=100)
    a = predict_scores(train_forest(X, y, tree_count=10, seed=7), X)
    b = predict_scores(train_forest(X, y, tree_count=10, seed=7), X)
    assert np.array_equal(a, b)


def test_forest_null_labels_auc_near_half():
    aucs = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        X = rng.normal(0, 1, (200, 4))
        y = (rng.random(200) < 0.5).astype(float)
        model = train_forest(X[:100], y[:100], tree_count=20, seed=seed)
        aucs.append(roc_auc(predict_scores(model, X[100:]), y[100:]))
    assert 0.4 <= float(np.mean(aucs)) <= 0.6


def test_forest_single_class_constant_model(rng):
    X = rng.random((20, 3))
    model = train_forest(X, np.ones(20), tree_count=5)
    assert np.all(predict_scores(model, X) == 1.0)


def test_forest_too_few_samples_errors(rng):
    with pytest.raises(ValueError):
        train_forest(rng.random((1, 3)), np.array([1.0]))


def test_forest_max_depth_one_limits_trees(rng):
    X, y = ranking_data(rng, n=100)
    model = train_forest(X, y, tree_count=5, max_depth=1, seed=0)
    for tree in model.trees:
        assert tree.feature.size <= 3  # root plus two leaves


def test_forest_narrow_matrix_errors(rng):
    X, y = ranking_data(rng, n=100)
    model = train_forest(X, y, tree_count=10, seed=0)
    with pytest.raises(ValueError):
        predict_scores(model, X[:, :1])


# ---------------------------------------------------------------------------
# metrics


def test_roc_auc_known_value():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_roc_auc_all_ties_is_half():
    assert roc_auc([0.3, 0.3, 0.3, 0.3], [0, 1, 0, 1]) == 0.5


def test_roc_auc_negation_symmetry(rng):
    s = rng.random(50)
    y = (rng.random(50) < 0.4).astype(int)
    y[0], y[1] = 0, 1
    assert roc_auc(-s, y) == pytest.approx(1.0 - roc_auc(s, y), abs=1e-12)


def test_roc_auc_single_class_errors():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_average_precision_known_value():
    ap = average_precision([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)


def test_average_precision_perfect_ranking():
    assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_average_precision_no_positives_errors():
    with pytest.raises(ValueError):
        average_precision([0.5, 0.6], [0, 0])


def test_average_precision_random_scores_near_base_rate():
    rng = np.random.default_rng(5)
    aps = []
    for _ in range(100):
        y = np.zeros(1000)
        y[rng.choice(1000, size=200, replace=False)] = 1.0
        aps.append(average_precision(rng.random(1000), y))
    assert float(np.mean(aps)) == pytest.approx(0.2, abs=0.015)


def test_metrics_invariant_to_monotone_rescaling(rng):
    s = rng.random(60)
    y = (rng.random(60) < 0.5).astype(int)
    y[0], y[1] = 0, 1
    for f in (lambda v: 2 * v + 1, lambda v: v ** 3, np.exp):
        assert roc_auc(f(s), y) == pytest.approx(roc_auc(s, y), abs=1e-12)
        assert average_precision(f(s), y) == pytest.approx(
            average_precision(s, y), abs=1e-12)


# ---------------------------------------------------------------------------
# permutation importance


def test_importance_zero_weight_feature_near_zero(rng):
    X, y = ranking_data(rng, n=300, sep=4.0)
    model = train_logreg(X, y, epochs=300)
    dead = LinearModel(weights=np.array([model.weights[0],
                                         model.weights[1], 0.0]),
                       bias=model.bias, feature_means=model.feature_means,
                       feature_stds=model.feature_stds)
    imp = permutation_importance(dead, X, y)
    assert abs(imp[2]) <= 0.02
    assert imp[0] > 0.05


def test_importance_column_permutation_exact(rng):
    X, y = ranking_data(rng, n=150, sep=2.0)
    model = train_logreg(X, y, epochs=300)
    perm = [2, 0, 1]
    permuted_model = LinearModel(weights=model.weights[perm], bias=model.bias,
                                 feature_means=model.feature_means[perm],
                                 feature_stds=model.feature_stds[perm])
    a = permutation_importance(model, X, y, seed=3)
    b = permutation_importance(permuted_model, X[:, perm], y, seed=3)
    assert np.array_equal(a[perm], b)


# ---------------------------------------------------------------------------
# serialization


def test_model_json_round_trip_logreg(tmp_path, rng):
    X, y = ranking_data(rng, n=50)
    model = train_logreg(X, y, epochs=100)
    p1 = tmp_path / "m1.json"
    p2 = tmp_path / "m2.json"
    save_model(model, p1)
    save_model(load_model(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_model_json_round_trip_forest(tmp_path, rng):
    X, y = ranking_data(rng, n=50)
    model = train_forest(X, y, tree_count=5, max_depth=3, seed=2)
    p1 = tmp_path / "m1.json"
    p2 = tmp_path / "m2.json"
    save_model(model, p1)
    loaded = load_model(p1)
    save_model(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(predict_scores(loaded, X),
                          predict_scores(model, X))


def test_load_model_rejects_other_formats(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "gridscout-rects", "version": 1}')
    with pytest.raises(ValueError):
        load_model(bad)
