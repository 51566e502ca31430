import numpy as np
import pytest
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.neighbors import KNeighborsRegressor
from sklearn.preprocessing import StandardScaler

from sacpkit.core import ConfigurationError, ContractViolationError, Task
from sacpkit.models import (
    Dataset,
    ModelKind,
    ModelSpec,
    Standardizer,
    default_roster,
    fit,
    predict,
)


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("ols", ModelSpec(ModelKind.OLS, lam=0.0)),
        ("ridge:2.5", ModelSpec(ModelKind.RIDGE, lam=2.5)),
        ("knn:7", ModelSpec(ModelKind.KNN, k=7)),
        ("rf_ridge:50:0.1", ModelSpec(ModelKind.RANDOM_FEATURE_RIDGE, width=50, lam=0.1)),
        ("logistic_gd:0.1:20", ModelSpec(ModelKind.LOGISTIC_GD, lr=0.1, iters=20)),
        ({"kind": "knn_classifier", "k": 3}, ModelSpec(ModelKind.KNN_CLASSIFIER, k=3)),
    ],
)
def test_model_spec_parse(text, expected):
    assert ModelSpec.parse(text) == expected


def test_model_spec_errors():
    with pytest.raises(ConfigurationError, match="at most 1"):
        ModelSpec.parse("ridge:1:2")
    with pytest.raises(ConfigurationError, match="Invalid k"):
        ModelSpec.parse("knn:many")
    with pytest.raises(ConfigurationError, match="nonnegative"):
        ModelSpec.parse("ridge:-1")
    with pytest.raises(ConfigurationError, match="ModelKind"):
        ModelSpec.parse("svm")
    assert ModelSpec.parse("rf_ridge:200:1.0").label == "rf_ridge:200:1.0"


def test_standardizer_matches_sklearn(regression_data):
    X, y = regression_data.X, regression_data.y
    scaler = Standardizer.fit(X, y)
    np.testing.assert_allclose(scaler.transform(X), StandardScaler().fit_transform(X))
    np.testing.assert_allclose(scaler.inverse_target(scaler.transform_target(y)), y)
    constant = Standardizer.fit(np.ones((5, 2)))
    np.testing.assert_array_equal(constant.x_scale, [1.0, 1.0])


def test_ols_matches_sklearn(regression_data):
    model = fit("ols", regression_data)
    ref = LinearRegression().fit(regression_data.X, regression_data.y)
    np.testing.assert_allclose(model.params["coef"], ref.coef_, atol=1e-6)
    np.testing.assert_allclose(predict(model, regression_data.X[:20]), ref.predict(regression_data.X[:20]), atol=1e-6)
    assert not model.fallback_ridge


@pytest.mark.parametrize("lam", [0.5, 10.0, 300.0])
def test_ridge_matches_sklearn(regression_data, lam):
    model = fit(ModelSpec(ModelKind.RIDGE, lam=lam), regression_data)
    ref = Ridge(alpha=lam).fit(regression_data.X, regression_data.y)
    np.testing.assert_allclose(predict(model, regression_data.X[:50]), ref.predict(regression_data.X[:50]), atol=1e-6)


def test_knn_matches_sklearn(regression_data):
    train, test = regression_data.subset(np.arange(300)), regression_data.X[300:]
    model = fit("knn:5", train)
    ref = KNeighborsRegressor(n_neighbors=5, algorithm="brute").fit(train.X, train.y)
    np.testing.assert_allclose(predict(model, test), ref.predict(test))


def test_knn_caps_neighbours_at_training_size():
    train = Dataset(X=np.arange(3.0)[:, None], y=[1.0, 2.0, 6.0])
    np.testing.assert_allclose(predict(fit("knn:10", train), np.array([[0.0]])), [3.0])


def test_singular_ols_falls_back_to_ridge(regression_data):
    X = np.column_stack([regression_data.X, regression_data.X[:, 0]])
    data = Dataset(X=X, y=regression_data.y)
    with pytest.warns(UserWarning, match="Singular Gram matrix"):
        model = fit("ols", data)
    assert model.fallback_ridge
    assert np.all(np.isfinite(predict(model, X[:5])))


def test_random_features_are_seeded(regression_data):
    first = predict(fit("rf_ridge:40:1.0", regression_data, seed=3), regression_data.X[:10])
    second = predict(fit("rf_ridge:40:1.0", regression_data, seed=3), regression_data.X[:10])
    other = predict(fit("rf_ridge:40:1.0", regression_data, seed=4), regression_data.X[:10])
    np.testing.assert_array_equal(first, second)
    assert not np.allclose(first, other)


@pytest.mark.parametrize("spec", ["logistic_gd:0.5:300", "knn_classifier:10"])
def test_classifiers_output_probabilities(classification_data, spec):
    X = Standardizer.fit(classification_data.X).transform(classification_data.X)
    data = Dataset(X=X, y=classification_data.y, task="classification", n_classes=3)
    probs = predict(fit(spec, data), X)
    assert probs.shape == (len(classification_data), 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert np.all(probs >= 0)
    assert (probs.argmax(axis=1) == data.y).mean() > 0.55


def test_fit_rejects_wrong_task(regression_data, classification_data):
    with pytest.raises(ConfigurationError, match="solves classification"):
        fit("logistic_gd", regression_data)
    with pytest.raises(ConfigurationError, match="solves regression"):
        fit("ridge:1.0", classification_data)


def test_predict_checks_features(regression_data):
    model = fit("ridge:1.0", regression_data)
    with pytest.raises(ContractViolationError, match="expects 3 features"):
        predict(model, np.ones((2, 4)))
    assert predict(model, np.ones(3)).shape == (1,)


def test_dataset_validation():
    with pytest.raises(ContractViolationError, match="do not line up"):
        Dataset(X=np.ones((3, 2)), y=np.ones(2))
    with pytest.raises(ContractViolationError, match="NaN"):
        Dataset(X=[[np.nan], [1.0]], y=[1.0, 2.0])
    with pytest.raises(ContractViolationError, match="0-based"):
        Dataset(X=np.ones((2, 1)), y=[-1, 0], task="classification")
    data = Dataset(X=np.ones((4, 2)), y=[0, 2, 1, 0], task=Task.CLASSIFICATION)
    assert data.n_classes == 3
    assert data.n_features == 2
    assert len(data.subset(np.array([0, 1]))) == 2


@pytest.mark.parametrize("task", ["regression", "classification"])
def test_default_roster(task):
    roster = default_roster(task, 9)
    assert len(roster) == 9
    assert all(spec.kind.task == task for spec in roster)
    assert roster[7].kind == roster[0].kind
    assert roster[7].seed == 1
    assert len(set(roster)) == 9
    with pytest.raises(ConfigurationError, match="at least one"):
        default_roster(task, 0)
