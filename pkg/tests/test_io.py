from unittest import mock

import numpy as np
import pandas as pd
import pytest

from sacpkit.baselines import CsaModel, WaggModel, WeightVector
from sacpkit.core import IngestionError
from sacpkit.io import dump_pickle, load_pickle
from sacpkit.io.tables import load_dataset_csv, load_scores_csv
from sacpkit.models import fit


def test_pickle_helpers(tmp_path):
    path = tmp_path / "nested" / "obj.pkl"
    dump_pickle({"a": np.arange(3)}, path)
    np.testing.assert_array_equal(load_pickle(path)["a"], np.arange(3))
    with pytest.raises(FileNotFoundError, match="No such artifact"):
        load_pickle(tmp_path / "missing.pkl")


def test_fitted_model_save_and_load(tmp_path, regression_data):
    model = fit("ridge:1.0", regression_data)
    path = model.save(tmp_path / "ridge")
    assert path.name == "ridge.pkl"
    loaded = type(model).load(path)
    np.testing.assert_array_equal(loaded.params["coef"], model.params["coef"])


@mock.patch("sacpkit.io.mixins.dump_pickle")
def test_save_keeps_explicit_suffix(mock_dump, tmp_path):
    model = WaggModel(weights=WeightVector([1.0]), threshold=2.0)
    path = model.save(tmp_path / "wagg.joblib")
    mock_dump.assert_called_once_with(obj=model, path=tmp_path / "wagg.joblib")
    assert path.suffix == ".joblib"


def test_load_checks_type(tmp_path):
    path = WaggModel(weights=WeightVector([0.5, 0.5]), threshold=1.0).save(tmp_path / "wagg")
    assert WaggModel.load(path).threshold == 1.0
    with pytest.raises(TypeError, match="not of type CsaModel"):
        CsaModel.load(path)


def test_load_dataset_csv(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x1,x2,y\n1.0,2.0,3.5\n-1,0.5,0.25\n\n", encoding="utf-8")
    data = load_dataset_csv(path, "regression", header=True)
    np.testing.assert_allclose(data.X, [[1.0, 2.0], [-1.0, 0.5]])
    np.testing.assert_allclose(data.y, [3.5, 0.25])
    assert data.name == "data"


def test_load_dataset_csv_class_labels(tmp_path):
    path = tmp_path / "iris.csv"
    path.write_text("1,2,setosa\n3,4,virginica\n5,6,setosa\n", encoding="utf-8")
    data = load_dataset_csv(path, "classification", class_labels=["setosa", "versicolor", "virginica"])
    np.testing.assert_array_equal(data.y, [0, 2, 0])
    assert data.n_classes == 3
    with pytest.raises(IngestionError, match="row 2 column 3: 'virginica'"):
        load_dataset_csv(path, "classification", class_labels=["setosa"])
    with pytest.raises(IngestionError, match="row 1 column 3: 'setosa'"):
        load_dataset_csv(path, "classification")


def test_load_dataset_csv_reports_offenders(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2,3\n4,5\n6,7,8\n", encoding="utf-8")
    with pytest.raises(IngestionError, match="row 2 has 2 cells, expected 3"):
        load_dataset_csv(ragged, "regression")
    malformed = tmp_path / "malformed.csv"
    malformed.write_text("a,b,y\n1,2,3\n4,abc,6\n", encoding="utf-8")
    with pytest.raises(IngestionError, match="row 3 column 2: 'abc'") as err:
        load_dataset_csv(malformed, "regression", header=True)
    assert err.value.offenders == ["row 3 column 2: 'abc'"]
    with pytest.raises(FileNotFoundError):
        load_dataset_csv(tmp_path / "absent.csv", "regression")


def test_scores_files_roundtrip(score_files):
    calib, profiles = load_scores_csv(score_files["calib"], score_files["test"])
    np.testing.assert_array_equal(calib.values, score_files["calib_m"].values)
    assert list(profiles) == ["a", "b", "c", "d"]
    assert list(profiles["c"]) == ["x", "y", "z"]
    np.testing.assert_array_equal(profiles["c"]["y"].scores, score_files["candidates"][2, 1])


def test_scores_csv_validation(tmp_path, score_files):
    bad_header = tmp_path / "bad_header.csv"
    pd.DataFrame({"model_1": [1.0], "model_3": [2.0]}).to_csv(bad_header, index=False)
    with pytest.raises(IngestionError, match="model_1..model_2"):
        load_scores_csv(bad_header, score_files["test"])

    negative = tmp_path / "negative.csv"
    pd.DataFrame({"model_1": [1.0, -2.0], "model_2": [1.0, 1.0]}).to_csv(negative, index=False)
    with pytest.raises(IngestionError, match="row 3 column model_1"):
        load_scores_csv(negative, score_files["test"])

    single = tmp_path / "single.csv"
    single.write_text("test_id,candidate,model_1\nt,a,1.0\n", encoding="utf-8")
    with pytest.raises(IngestionError, match="1 score columns but"):
        load_scores_csv(score_files["calib"], single)

    duplicated = tmp_path / "dup.csv"
    duplicated.write_text("test_id,candidate,model_1,model_2\nt,a,1,1\nt,a,2,2\n", encoding="utf-8")
    with pytest.raises(IngestionError, match="t/a"):
        load_scores_csv(score_files["calib"], duplicated)

    no_keys = tmp_path / "no_keys.csv"
    no_keys.write_text("model_1,model_2\n1,1\n", encoding="utf-8")
    with pytest.raises(IngestionError, match="key columns"):
        load_scores_csv(score_files["calib"], no_keys)
