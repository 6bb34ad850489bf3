"""Readout layer tests: closed-form ridge, metrics, persistence, grid search."""

import math
from dataclasses import replace

import numpy as np
import pytest

from sigres.paths import LabeledDataset, Path
from sigres.readout import (
    Candidate,
    GridSearchConfig,
    Metrics,
    RidgeModel,
    evaluate,
    fit_ridge,
    grid_search,
    load_model,
    predict,
    save_model,
)
from sigres.reservoir import ReservoirSpec, ReservoirState, extract_batch
from sigres.seeding import STREAM_RUNS, seed_sequence


def test_interpolation_regime_reproduces_training_labels():
    x = np.eye(4)
    labels = np.array([0, 1, 2, 3])
    model = fit_ridge(x, labels, 1e-10, normalize=False)
    assert np.array_equal(predict(model, x), labels)


def test_fully_shrunk_limit_predicts_prior():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 3))
    labels = np.array([0, 0, 0, 0, 0, 1, 1, 2])
    model = fit_ridge(x, labels, 1e12, normalize=False)
    assert np.abs(model.weights).max() <= 1e-9
    assert np.array_equal(predict(model, x), np.zeros(8, dtype=np.int64))


def test_duplicated_columns_split_weight_evenly():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((10, 3))
    labels = rng.integers(0, 3, size=10)
    lam = 0.8
    base = fit_ridge(x, labels, lam / 2.0, normalize=False)
    doubled = fit_ridge(np.hstack([x, x]), labels, lam, normalize=False)
    assert np.allclose(doubled.weights[:, :3], base.weights / 2.0, atol=1e-10)
    assert np.allclose(doubled.weights[:, 3:], base.weights / 2.0, atol=1e-10)
    assert np.allclose(doubled.intercepts, base.intercepts, atol=1e-10)
    fresh = rng.standard_normal((6, 3))
    assert np.array_equal(predict(doubled, np.hstack([fresh, fresh])), predict(base, fresh))


def test_fit_is_permutation_equivariant():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((12, 5))
    labels = rng.integers(0, 4, size=12)
    perm = rng.permutation(12)
    a = fit_ridge(x, labels, 0.3)
    b = fit_ridge(x[perm], labels[perm], 0.3)
    assert np.abs(a.weights - b.weights).max() <= 1e-10
    assert np.abs(a.intercepts - b.intercepts).max() <= 1e-10


def test_prediction_ties_break_to_lower_class():
    model = RidgeModel(
        weights=np.zeros((3, 2)),
        intercepts=np.array([0.5, 0.5, 0.2]),
        lam=1.0,
        classes=np.array([0, 1, 2]),
        feature_mean=np.zeros(2),
        feature_scale=np.ones(2),
    )
    assert np.array_equal(predict(model, np.ones((4, 2))), np.zeros(4, dtype=np.int64))


def test_all_zero_features_predict_intercept_argmax():
    x = np.zeros((5, 3))
    labels = np.array([0, 0, 1, 1, 2])
    model = fit_ridge(x, labels, 0.5)
    assert np.array_equal(predict(model, np.zeros((2, 3))), np.array([0, 0]))


def test_normalization_statistics():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((20, 4))
    x[:, 2] = 7.0  # constant column
    labels = rng.integers(0, 2, size=20)
    model = fit_ridge(x, labels, 0.1, normalize=True)
    assert model.feature_scale[2] == 0.0
    xn = (x - model.feature_mean) * model.feature_scale
    assert np.abs(xn.mean(axis=0)).max() <= 1e-10
    stds = xn.std(axis=0)
    assert np.abs(stds[[0, 1, 3]] - 1.0).max() <= 1e-10
    assert np.all(xn[:, 2] == 0.0)


def test_normalization_cancels_global_feature_scale():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((15, 3))
    labels = rng.integers(0, 3, size=15)
    fresh = rng.standard_normal((7, 3))
    a = fit_ridge(x, labels, 0.2, normalize=True)
    b = fit_ridge(1000.0 * x, labels, 0.2, normalize=True)
    assert np.array_equal(predict(a, fresh), predict(b, 1000.0 * fresh))


def test_fit_validation_errors():
    x = np.eye(3)
    with pytest.raises(ValueError, match="lam"):
        fit_ridge(x, [0, 1, 2], 0.0)
    with pytest.raises(ValueError, match="single class"):
        fit_ridge(x, [1, 1, 1], 0.5)
    with pytest.raises(ValueError, match="non-finite"):
        fit_ridge(np.array([[np.nan, 1.0], [0.0, 1.0]]), [0, 1], 0.5)
    with pytest.raises(ValueError, match="labels shape"):
        fit_ridge(x, [0, 1], 0.5)
    model = fit_ridge(x, [0, 1, 2], 0.5)
    with pytest.raises(ValueError, match="width"):
        predict(model, np.zeros((2, 5)))


def test_metrics_confusion_and_per_class():
    m = evaluate([0, 0, 1, 2, 2, 2], [0, 1, 1, 2, 0, 2])
    assert np.array_equal(m.confusion.sum(axis=1), [2, 1, 3])
    assert math.isclose(m.accuracy, 4.0 / 6.0)
    assert np.allclose(m.per_class, [0.5, 1.0, 2.0 / 3.0])
    assert np.array_equal(m.classes, [0, 1, 2])


def test_metrics_with_explicit_class_list():
    m = evaluate([1, 1], [1, 0], classes=[0, 1, 2])
    assert m.confusion.shape == (3, 3)
    assert np.array_equal(m.confusion.sum(axis=1), [0, 2, 0])
    assert m.per_class[0] == 0.0 and m.per_class[2] == 0.0


def test_metrics_validation():
    with pytest.raises(ValueError, match="equal length"):
        evaluate([0, 1], [0])
    with pytest.raises(ValueError, match="empty"):
        evaluate([], [])


def test_model_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    model = fit_ridge(rng.standard_normal((9, 4)), rng.integers(0, 3, size=9), 0.25)
    fname = str(tmp_path / "model.txt")
    save_model(model, fname)
    loaded = load_model(fname)
    for name in ("weights", "intercepts", "classes", "feature_mean", "feature_scale"):
        assert np.array_equal(getattr(loaded, name), getattr(model, name))
    assert loaded.lam == model.lam


def test_model_load_errors(tmp_path):
    bad = tmp_path / "model.txt"
    bad.write_text("#wrong C=1 N=1 lambda=1\n0.0\n")
    with pytest.raises(ValueError, match="expected '#ridge"):
        load_model(str(bad))
    bad.write_text("#ridge C=2 N=2 lambda=0.5\n1 0\n")
    with pytest.raises(ValueError, match="truncated"):
        load_model(str(bad))
    bad.write_text(
        "#ridge C=1 N=2 lambda=0.5\n1 0\nmissing marker\n0.1\n#classes\n0\n#normalization\n0 0\n1 1\n"
    )
    with pytest.raises(ValueError, match="intercepts"):
        load_model(str(bad))


# ---------------------------------------------------------------------------
# grid search


def toy_split(seed, per_class=6, length=8):
    """Separable 2-class set: upward drifts against downward drifts."""
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, 1.0, length)
    paths, labels = [], []
    for cls, sign in ((0, 1.0), (1, -1.0)):
        for _ in range(per_class):
            steps = sign * np.abs(rng.standard_normal((length, 2))) * 0.2
            steps[0] = 0.0
            paths.append(Path(times, np.cumsum(steps, axis=0)))
            labels.append(cls)
    return LabeledDataset(tuple(paths), np.array(labels), 2)


def small_grid(**overrides):
    base = dict(width=16, sigma_a_values=(1.0,), sigma_b_values=(0.1,),
                sigma_0_values=(1.0,), activations=("tanh",), lambdas=(0.01,),
                k=3, num_runs=1, seed=9)
    base.update(overrides)
    return GridSearchConfig(**base)


def test_grid_config_validation():
    with pytest.raises(ValueError, match="nonempty"):
        GridSearchConfig(width=8, lambdas=())
    with pytest.raises(ValueError, match="k must be"):
        GridSearchConfig(width=8, k=1)
    with pytest.raises(ValueError, match="width"):
        GridSearchConfig(width=0)


def test_grid_of_size_one_equals_single_fit():
    train, test = toy_split(0), toy_split(1)
    result = grid_search(train, test, "rcde", small_grid())
    assert len(result.scores) == 1
    assert result.scores[0].error is None

    spec = ReservoirSpec(variant="rcde", width=16, input_dim=2, activation="tanh",
                         sigma_a=1.0, sigma_b=0.1, sigma_0=1.0,
                         seed=seed_sequence(9, STREAM_RUNS, 0))
    state = ReservoirState(spec)
    model = fit_ridge(extract_batch(state, train).values, train.labels, 0.01)
    manual = float(np.mean(predict(model, extract_batch(state, test).values) == test.labels))
    assert result.metrics.accuracy == manual
    assert result.run_accuracies == (manual,)
    assert result.metrics.accuracy >= 0.9  # the toy task is separable


def test_grid_search_excludes_overflowing_candidate():
    train, test = toy_split(0), toy_split(1)
    clean = grid_search(train, test, "rcde", small_grid())
    noisy = grid_search(
        train, test, "rcde", small_grid(sigma_a_values=(1.0, 1e60), activations=("identity",))
    )
    clean_id = grid_search(train, test, "rcde", small_grid(activations=("identity",)))
    assert noisy.best == clean_id.best
    assert noisy.metrics.accuracy == clean_id.metrics.accuracy
    errors = [s for s in noisy.scores if s.error is not None]
    assert errors and all("extraction failed" in s.error for s in errors)
    assert all(s.candidate.sigma_a == 1e60 for s in errors)
    del clean


def test_grid_search_is_deterministic():
    train, test = toy_split(0), toy_split(1)
    grid = small_grid(lambdas=(0.01, 1.0), num_runs=3)
    a = grid_search(train, test, "rcde", grid)
    b = grid_search(train, test, "rcde", grid)
    assert a.best == b.best
    assert a.run_accuracies == b.run_accuracies
    assert a.metrics.accuracy == b.metrics.accuracy
    assert np.array_equal(a.metrics.confusion, b.metrics.confusion)


def test_grid_search_tie_prefers_smaller_lambda():
    train, test = toy_split(0), toy_split(1)
    result = grid_search(train, test, "rcde", small_grid(lambdas=(1.0, 0.001)))
    ties = {s.candidate.lam for s in result.scores
            if s.val_accuracy == result.best_val_accuracy}
    if len(ties) > 1:  # both lambdas reach the same validation accuracy
        assert result.best.lam == 0.001


def test_grid_search_validation():
    train, test = toy_split(0), toy_split(1)
    with pytest.raises(ValueError, match="unknown variant"):
        grid_search(train, test, "esn", small_grid())
    with pytest.raises(ValueError, match="folds"):
        grid_search(train.subset([0, 11]), test, "rcde", small_grid())


def test_grid_search_covers_all_variants():
    train, test = toy_split(0), toy_split(1)
    for variant, extra in (
        ("rcde", {}),
        ("rfcde", {"feature_counts": (8,), "frequency_scales": (1.0,)}),
        ("rrde", {"levels": (2,), "chunk_size": 3}),
    ):
        result = grid_search(train, test, variant, small_grid(**extra))
        assert 0.0 <= result.metrics.accuracy <= 1.0
        assert result.scores[0].error is None, (variant, result.scores[0].error)
