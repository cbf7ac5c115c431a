import numpy as np
import pytest

from lib.errors import DegenerateModelError, GridTooLargeError, InvalidModelError
from lib.grid import GridDensity, tensor_axes, tensor_points
from lib.psd_core import Domain


def test_tensor_axes_are_midpoints(unit_interval):
    """Test that grid axes sit at cell midpoints."""
    (axis,) = tensor_axes(unit_interval, 4)
    assert np.allclose(axis, [-0.75, -0.25, 0.25, 0.75])


def test_tensor_points_order(square):
    """Test that the first coordinate varies slowest."""
    points = tensor_points(square, 2)
    assert np.allclose(points, [[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]])


def test_tensor_points_cap(square):
    """Test that a grid above the cell cap is refused."""
    with pytest.raises(GridTooLargeError):
        tensor_points(square, 100, max_cells=1000)


def test_grid_needs_bounded_domain():
    """Test that grids cannot be built on R^d."""
    with pytest.raises(InvalidModelError):
        tensor_axes(Domain.whole_space(), 4)


def test_uniform_density_has_unit_mass(square):
    """Test that the uniform grid density integrates to one."""
    density = GridDensity.uniform(square, 8)
    assert density.mass() == pytest.approx(1.0)
    assert np.allclose(density.mean(), [0.0, 0.0])


def test_from_function_moments(unit_interval):
    """Test the mean and variance of a discretized density."""
    density = GridDensity.from_function(lambda x: 1 + x[:, 0], unit_interval, 2000).normalized()
    assert density.mean()[0] == pytest.approx(1 / 3, abs=1e-5)
    assert density.covariance()[0, 0] == pytest.approx(2 / 9, abs=1e-5)


def test_from_samples_histogram(unit_interval):
    """Test that weighted samples land in their cells and outside samples are dropped."""
    samples = np.array([[-0.9], [0.1], [0.2], [5.0]])
    density = GridDensity.from_samples(samples, np.array([0.25, 0.25, 0.25, 0.25]), unit_interval, 2)
    assert np.allclose(density.values, [0.25, 0.5])


def test_lookup_is_piecewise_constant(unit_interval):
    """Test evaluation inside cells and zero outside the domain."""
    density = GridDensity(unit_interval, 2, np.array([0.2, 0.8]))
    assert np.allclose(density(np.array([-0.5, 0.4, 3.0])), [0.2, 0.8, 0.0])


def test_rejects_negative_values(unit_interval):
    """Test validation of grid values."""
    with pytest.raises(InvalidModelError):
        GridDensity(unit_interval, 2, np.array([-0.1, 1.0]))
    with pytest.raises(InvalidModelError):
        GridDensity(unit_interval, 3, np.array([0.1, 1.0]))


def test_zero_density_cannot_be_normalized(unit_interval):
    """Test that normalizing an all-zero grid raises."""
    with pytest.raises(DegenerateModelError):
        GridDensity(unit_interval, 2, np.zeros(2)).normalized()
