import json
import os
import sys
import pytest
import numpy as np

# Add the parent directory to Python path so we can import the main package
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from lib.psd_core import Domain, GaussianPsdModel


@pytest.fixture
def unit_interval():
    """The hypercube [-1, 1] in one dimension."""
    return Domain.hypercube(1)


@pytest.fixture
def square():
    """The hypercube [-1, 1]^2."""
    return Domain.hypercube(2)


@pytest.fixture
def rng():
    """A seeded generator so random test inputs are reproducible."""
    return np.random.default_rng(1234)


@pytest.fixture
def psd_1d():
    """A full-rank order-3 model on the real line."""
    B = np.array([[1.0, 0.2, -0.1], [0.3, 0.8, 0.1], [0.0, -0.2, 0.6]])
    return GaussianPsdModel(
        anchors=np.array([[-0.5], [0.1], [0.6]]),
        precision=np.array([3.0]),
        weights=B @ B.T,
    )


@pytest.fixture
def psd_2d():
    """An order-3 model over the groups (x, y)."""
    B = np.array([[0.9, 0.1, 0.0], [0.2, 0.7, -0.3], [0.1, 0.0, 0.5]])
    return GaussianPsdModel(
        anchors=np.array([[-0.4, 0.3], [0.2, -0.1], [0.5, 0.6]]),
        precision=np.array([2.0, 4.0]),
        weights=B @ B.T,
        groups=(("x", 1), ("y", 1)),
    )


@pytest.fixture
def config_file(tmp_path):
    """Write a small experiment config and return a factory taking overrides."""
    def make(**overrides):
        config = {
            "scenario": "linear_gaussian",
            "methods": ["psd", "grid"],
            "steps": 3,
            "seeds": [0],
            "grid": 32,
            "learn": {"M": 12, "n": 200, "precision": [8.0], "reg": 1e-6},
            "initial": {"kind": "gmm", "weights": [1.0], "means": [0.0], "precision": [4.0]},
            "epsilons": [0.5],
            "particles": [200],
            "output_dir": str(tmp_path / "out"),
        }
        config.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        return path
    return make
