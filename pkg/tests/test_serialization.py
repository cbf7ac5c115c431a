import json

import numpy as np
import pytest

from lib.errors import InvalidModelError
from lib.generalized_psd import GeneralizedPsdModel, g_from_gmm
from lib.psd_core import GaussianPsdModel, scale
from lib.serialization import FORMAT, atomic_write_text, dumps, load_model, loads, model_to_dict, save_model


def test_gaussian_model_round_trip_is_bit_exact(psd_2d, tmp_path):
    """Test that saving and loading a Gaussian model gives identical arrays."""
    model = scale(psd_2d, 1.2345678901234567)
    path = tmp_path / "models" / "q.json"
    save_model(model, path)
    loaded = load_model(path)
    assert isinstance(loaded, GaussianPsdModel)
    assert np.array_equal(loaded.anchors, model.anchors)
    assert np.array_equal(loaded.weights, model.weights)
    assert np.array_equal(loaded.precision, model.precision)
    assert loaded.log_scale == model.log_scale
    assert loaded.groups == model.groups


def test_generalized_model_round_trip_is_bit_exact():
    """Test the entries table of a generalized model."""
    model = g_from_gmm([0.3, 0.7], [[0.0, 1.0], [1.0, -1.0]], [np.eye(2) * 2, np.eye(2) * 3],
                       groups=(("x", 1), ("y", 1)))
    loaded = loads(dumps(model))
    assert isinstance(loaded, GeneralizedPsdModel)
    assert np.array_equal(loaded.log_scales, model.log_scales)
    assert np.array_equal(loaded.precisions, model.precisions)
    assert np.array_equal(loaded.centers, model.centers)
    assert loaded.groups == model.groups


def test_document_layout(psd_1d):
    """Test the header fields of a serialized model."""
    doc = model_to_dict(psd_1d)
    assert doc["format"] == FORMAT
    assert doc["kind"] == "gaussian"
    assert doc["order"] == 3
    assert len(doc["weights"]) == 9


def test_rejects_unknown_format(psd_1d):
    """Test that documents with another format tag are refused."""
    doc = model_to_dict(psd_1d)
    doc["format"] = "something-else/2"
    with pytest.raises(InvalidModelError):
        loads(json.dumps(doc))


def test_rejects_malformed_document():
    """Test that missing fields surface as InvalidModelError."""
    with pytest.raises(InvalidModelError):
        loads(json.dumps({"format": FORMAT, "kind": "gaussian"}))
    with pytest.raises(InvalidModelError):
        loads("not json")


def test_atomic_write_replaces_content(tmp_path):
    """Test that atomic writes leave only the final file behind."""
    path = tmp_path / "out.txt"
    atomic_write_text(path, "first")
    atomic_write_text(path, "second")
    assert path.read_text() == "second"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]
