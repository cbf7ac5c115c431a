import logging

import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from lib.errors import DegenerateModelError, InvalidModelError, MissingSamplerError
from lib.hmm import (
    SCENARIOS,
    DensityKernel,
    Trajectory,
    estimate_mixing,
    make_scenario,
    mixing_over_observations,
    optimal_kernel,
    rejection_sample,
    simulate,
)


@pytest.mark.parametrize("name", ["linear_gaussian", "bimodal", "mixing"])
def test_transition_is_a_probability_density(name):
    """Test that Q(u, .) integrates to one over the state domain."""
    hmm = make_scenario(name)
    for u in (-0.9, 0.0, 0.7):
        mass, _ = quad(lambda x: hmm.transition([u], [x])[0], -1, 1, points=[0.0])
        assert mass == pytest.approx(1.0, rel=1e-6)


def test_rotation_transition_is_a_probability_density():
    """Test the two-dimensional transition kernel."""
    hmm = make_scenario("rotation2d")
    u = np.array([0.3, -0.4])
    mass, _ = dblquad(lambda y, x: hmm.transition(u, [x, y])[0], -1, 1, -1, 1, epsrel=1e-8)
    assert mass == pytest.approx(1.0, rel=1e-5)


def test_initial_density_integrates_to_one():
    """Test the truncated initial law."""
    hmm = make_scenario("linear_gaussian")
    mass, _ = quad(lambda x: hmm.initial(np.zeros((1, 0)), [x])[0], -1, 1)
    assert mass == pytest.approx(1.0, rel=1e-8)


def test_kernel_broadcasts_a_single_condition():
    """Test that one conditioning row is paired with many targets."""
    hmm = make_scenario("linear_gaussian")
    targets = np.linspace(-0.9, 0.9, 5)
    values = hmm.transition([0.2], targets)
    expected = np.array([hmm.transition([0.2], [t])[0] for t in targets])
    assert values.shape == (5,)
    assert np.allclose(values, expected)


def test_unknown_scenario_raises():
    """Test that scenario names are checked."""
    with pytest.raises(InvalidModelError):
        make_scenario("does-not-exist")
    assert set(SCENARIOS) >= {"linear_gaussian", "bimodal", "rotation2d", "mixing"}


def test_scenario_parameters_are_applied():
    """Test that keyword parameters reach the scenario."""
    hmm = make_scenario("linear_gaussian", a=0.9)
    assert hmm.linear.F[0, 0] == pytest.approx(0.9)


def test_simulate_is_deterministic_and_in_domain():
    """Test that equal seeds give identical trajectories inside the domain."""
    hmm = make_scenario("bimodal")
    a = simulate(hmm, 25, seed=4)
    b = simulate(hmm, 25, seed=4)
    c = simulate(hmm, 25, seed=5)
    assert a.states.shape == (26, 1)
    assert a.observations.shape == (25, 1)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.observations, b.observations)
    assert not np.array_equal(a.states, c.states)
    assert np.all(np.abs(a.states) < 1)


def test_simulate_two_dimensional():
    """Test shapes for the rotation scenario."""
    trajectory = simulate(make_scenario("rotation2d"), 10, seed=0)
    assert trajectory.states.shape == (11, 2)
    assert trajectory.observations.shape == (10, 2)
    assert trajectory.steps == 10


def test_trajectory_length_mismatch():
    """Test that states must outnumber observations by one."""
    with pytest.raises(InvalidModelError):
        Trajectory(np.zeros((3, 1)), np.zeros((3, 1)), seed=0)


def test_missing_sampler():
    """Test that a kernel without a sampler cannot be simulated."""
    kernel = DensityKernel(lambda u, x: np.ones(len(x)), (1, 1))
    with pytest.raises(MissingSamplerError):
        kernel.sample(np.zeros((1, 1)), np.random.default_rng(0))


def test_rejection_sample_gives_up():
    """Test that an impossible acceptance region raises instead of looping forever."""
    rng = np.random.default_rng(0)
    with pytest.raises(DegenerateModelError):
        rejection_sample(
            lambda idx, r: r.uniform(size=(len(idx), 1)),
            lambda x: np.zeros(len(x), dtype=bool),
            2,
            rng,
        )


def test_estimate_mixing_closed_form():
    """Test sigma and xi on a two-point grid."""
    kernel = DensityKernel(lambda u, x: np.exp(-((x - u) ** 2).sum(axis=1)), (1, 1))
    estimate = estimate_mixing(kernel, [0.0, 1.0], [0.0, 1.0])
    assert estimate.sigma == pytest.approx(np.exp(-0.5))
    assert np.allclose(estimate.xi, np.exp(-0.5))
    assert estimate.slack == pytest.approx(0.0, abs=1e-15)


def test_estimate_mixing_of_constant_kernel_is_one():
    """Test that a kernel independent of u has sigma = 1."""
    kernel = DensityKernel(lambda u, x: 1.0 + x[:, 0] ** 2, (1, 1))
    estimate = estimate_mixing(kernel, np.linspace(-1, 1, 5), np.linspace(-1, 1, 7))
    assert estimate.sigma == pytest.approx(1.0)


def test_estimate_mixing_vanishing_kernel(caplog):
    """Test that a kernel with zeros is reported as non-mixing."""
    kernel = DensityKernel(lambda u, x: np.where(np.abs(x - u)[:, 0] < 0.5, 1.0, 0.0), (1, 1))
    with caplog.at_level(logging.WARNING):
        estimate = estimate_mixing(kernel, [-1.0, 1.0], [-1.0, 1.0])
    assert estimate.sigma == 0.0
    assert "mixing coefficient is 0" in caplog.text


def test_optimal_kernel_and_mixing_over_observations():
    """Test that the wide-noise scenario has a positive mixing coefficient."""
    hmm = make_scenario("mixing")
    grid = np.linspace(-0.95, 0.95, 39)
    R = optimal_kernel(hmm, [0.2])
    assert R([0.1], [0.3])[0] == pytest.approx(
        hmm.transition([0.1], [0.3])[0] * hmm.observation([0.3], [0.2])[0]
    )
    trajectory = simulate(hmm, 5, seed=1)
    sigma = mixing_over_observations(hmm, trajectory.observations, grid, grid)
    assert 0 < sigma <= 1
    single = estimate_mixing(optimal_kernel(hmm, trajectory.observations[0]), grid, grid).sigma
    assert sigma <= single


def histogram_tv(samples, density, bins=64):
    """TV between a sample histogram on [-1, 1] and a density evaluated at the bin midpoints."""
    heights, edges = np.histogram(samples, bins=bins, range=(-1.0, 1.0), density=True)
    mids = (edges[:-1] + edges[1:]) / 2
    return float(np.abs(heights - density(mids)).sum() * (edges[1] - edges[0]))


@pytest.mark.parametrize("name", ["linear_gaussian", "bimodal", "mixing"])
def test_transition_sampler_matches_its_density(name):
    """Test that transition draws from a fixed state follow Q(u, .) within 0.05 in TV."""
    hmm = make_scenario(name)
    rng = np.random.default_rng(5)
    draws = hmm.transition.sample(np.full((100_000, 1), 0.5), rng)[:, 0]
    assert histogram_tv(draws, lambda x: hmm.transition([0.5], x.reshape(-1, 1))) < 0.05


def test_initial_sampler_matches_its_density():
    """Test the truncated initial law sampler against its density."""
    hmm = make_scenario("linear_gaussian")
    draws = hmm.initial.sample(np.zeros((100_000, 0)), np.random.default_rng(6))[:, 0]
    assert histogram_tv(draws, lambda x: hmm.initial(np.zeros((len(x), 0)), x.reshape(-1, 1))) < 0.05
