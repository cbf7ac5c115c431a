import numpy as np
import pytest
from scipy.integrate import dblquad, quad
from scipy.special import erf

from lib.errors import DegenerateModelError, DimensionError, InvalidModelError
from lib.psd_core import (
    Domain,
    GaussianPsdModel,
    check_psd,
    compact,
    evaluate,
    flat_model,
    from_gmm,
    from_linear_square,
    integral,
    log_normalizer,
    marginalize,
    markov_step,
    mean,
    normalize,
    partial_eval,
    product,
    project_psd,
    rename_groups,
    scale,
    union_groups,
)


@pytest.fixture
def single_bump():
    """f(x) = 2 exp(-2 x^2): one anchor at 0 with precision 1 and weight 2."""
    return GaussianPsdModel(anchors=[[0.0]], precision=[1.0], weights=[[2.0]])


def test_domain_hypercube_limits():
    """Test that a hypercube reports its bounds, volume and center."""
    domain = Domain.box([(-1, 2), (0, 1)])
    lo, hi = domain.limits(2)
    assert np.allclose(lo, [-1, 0])
    assert np.allclose(hi, [2, 1])
    assert domain.volume() == pytest.approx(3.0)
    assert np.allclose(domain.center(), [0.5, 0.5])


def test_domain_rejects_empty_interval():
    """Test that bounds with lo >= hi are rejected."""
    with pytest.raises(InvalidModelError):
        Domain.box([(1.0, 1.0)])


def test_domain_product_and_whole_space():
    """Test Cartesian products of domains."""
    assert Domain.hypercube(1).product(Domain.hypercube(2)).dim == 3
    assert not Domain.whole_space().product(Domain.whole_space()).is_bounded
    with pytest.raises(InvalidModelError):
        Domain.hypercube(1).product(Domain.whole_space())


def test_model_rejects_non_psd_weights():
    """Test that an indefinite weight matrix is rejected."""
    with pytest.raises(InvalidModelError):
        GaussianPsdModel(anchors=[[0.0], [1.0]], precision=[1.0], weights=[[1.0, 2.0], [2.0, 1.0]])


def test_model_rejects_bad_shapes_and_precision():
    """Test validation of weight shape and precision sign."""
    with pytest.raises(InvalidModelError):
        GaussianPsdModel(anchors=[[0.0], [1.0]], precision=[1.0], weights=[[1.0]])
    with pytest.raises(InvalidModelError):
        GaussianPsdModel(anchors=[[0.0]], precision=[-1.0], weights=[[1.0]])
    with pytest.raises(InvalidModelError):
        GaussianPsdModel(anchors=[[0.0, 1.0]], precision=[1.0, 1.0], weights=[[1.0]], groups=(("x", 1),))


def test_model_arrays_are_read_only(psd_1d):
    """Test that a constructed model cannot be mutated in place."""
    with pytest.raises(ValueError):
        psd_1d.weights[0, 0] = 5.0


def test_check_psd_tolerates_rounding():
    """Test that eigenvalues slightly below zero relative to the trace are accepted."""
    v = np.array([1.0, 1.0]) / np.sqrt(2)
    w = np.array([1.0, -1.0]) / np.sqrt(2)
    weights = np.outer(v, v) - 1e-13 * np.outer(w, w)
    check_psd(weights)
    with pytest.raises(InvalidModelError):
        check_psd(np.outer(v, v) - 1e-3 * np.outer(w, w))


def test_project_psd_clips_negative_eigenvalues():
    """Test that projection removes a clearly negative direction."""
    projected = project_psd(np.array([[1.0, 0.0], [0.0, -0.5]]))
    assert np.linalg.eigvalsh(projected).min() >= 0
    assert projected[0, 0] == pytest.approx(1.0)


def test_evaluate_single_point_and_batch(single_bump):
    """Test evaluation at one point returns a float and at many points an array."""
    value = evaluate(single_bump, 0.5)
    assert isinstance(value, float)
    assert value == pytest.approx(2 * np.exp(-0.5))
    values = evaluate(single_bump, np.array([[0.0], [1.0]]))
    assert np.allclose(values, [2.0, 2 * np.exp(-2.0)])


def test_evaluate_rejects_wrong_dimension(psd_2d):
    """Test that a point with the wrong number of coordinates raises DimensionError."""
    with pytest.raises(DimensionError):
        evaluate(psd_2d, [0.1, 0.2, 0.3])


def test_evaluate_is_nonnegative(psd_1d):
    """Test that a PSD model never evaluates below zero."""
    values = evaluate(psd_1d, np.linspace(-5, 5, 1001))
    assert np.all(values >= 0)


def test_integral_closed_form(single_bump, unit_interval):
    """Test the integral of 2 exp(-2 x^2) over R and over [-1, 1]."""
    assert integral(single_bump, Domain.whole_space()) == pytest.approx(2 * np.sqrt(np.pi / 2), rel=1e-12)
    expected = 2 * np.sqrt(np.pi / 2) * erf(np.sqrt(2))
    assert integral(single_bump, unit_interval) == pytest.approx(expected, rel=1e-12)


def test_integral_matches_quadrature_1d(psd_1d, unit_interval):
    """Test the closed-form integral against adaptive quadrature."""
    whole, _ = quad(lambda t: evaluate(psd_1d, t), -np.inf, np.inf)
    bounded, _ = quad(lambda t: evaluate(psd_1d, t), -1, 1)
    assert integral(psd_1d, Domain.whole_space()) == pytest.approx(whole, rel=1e-8)
    assert integral(psd_1d, unit_interval) == pytest.approx(bounded, rel=1e-8)


def test_integral_matches_quadrature_2d(psd_2d, square):
    """Test the two-dimensional integral over a square against dblquad."""
    expected, _ = dblquad(lambda y, x: evaluate(psd_2d, [x, y]), -1, 1, -1, 1, epsabs=1e-12, epsrel=1e-10)
    assert integral(psd_2d, square) == pytest.approx(expected, rel=1e-7)


def test_normalize_gives_unit_mass(psd_1d, unit_interval):
    """Test that normalize returns a unit-mass model and the original mass."""
    normalized, Z = normalize(psd_1d, unit_interval)
    assert Z == pytest.approx(integral(psd_1d, unit_interval), rel=1e-12)
    assert integral(normalized, unit_interval) == pytest.approx(1.0, rel=1e-12)
    assert log_normalizer(psd_1d, unit_interval) == pytest.approx(np.log(Z), rel=1e-12)


def test_normalize_zero_model_raises(unit_interval):
    """Test that a zero-mass model cannot be normalized."""
    zero = GaussianPsdModel(anchors=[[0.0], [0.5]], precision=[1.0], weights=np.zeros((2, 2)))
    with pytest.raises(DegenerateModelError):
        normalize(zero, unit_interval)


def test_scale_multiplies_mass(psd_1d, unit_interval):
    """Test that scaling by 3 triples the integral."""
    assert integral(scale(psd_1d, 3.0), unit_interval) == pytest.approx(3 * integral(psd_1d, unit_interval))
    with pytest.raises(InvalidModelError):
        scale(psd_1d, 0.0)


def test_large_log_scale_is_stable(single_bump, unit_interval):
    """Test that normalization is unaffected by a huge constant factor."""
    big = scale(single_bump, 1e200)
    a, _ = normalize(big, unit_interval)
    b, _ = normalize(single_bump, unit_interval)
    assert evaluate(a, 0.3) == pytest.approx(evaluate(b, 0.3), rel=1e-10)


def test_partial_eval_matches_evaluation(psd_2d, rng):
    """Test that fixing y reproduces f(x, y0) for every x."""
    y0 = 0.37
    h = partial_eval(psd_2d, "y", y0)
    xs = rng.uniform(-1, 1, size=20)
    expected = evaluate(psd_2d, np.column_stack([xs, np.full_like(xs, y0)]))
    assert h.group_names == ["x"]
    assert np.allclose(evaluate(h, xs), expected, rtol=1e-12)


def test_partial_eval_rejects_whole_model(psd_1d):
    """Test that fixing every group is refused."""
    with pytest.raises(DimensionError):
        partial_eval(psd_1d, "x", 0.0)


def test_marginalize_matches_quadrature(psd_2d, unit_interval):
    """Test integrating y out over [-1, 1] and over R."""
    bounded = marginalize(psd_2d, "y", unit_interval)
    whole = marginalize(psd_2d, "y", Domain.whole_space())
    for x in (-0.7, 0.0, 0.45):
        expected_b, _ = quad(lambda y: evaluate(psd_2d, [x, y]), -1, 1)
        expected_w, _ = quad(lambda y: evaluate(psd_2d, [x, y]), -np.inf, np.inf)
        assert evaluate(bounded, x) == pytest.approx(expected_b, rel=1e-8)
        assert evaluate(whole, x) == pytest.approx(expected_w, rel=1e-8)
    assert bounded.order == psd_2d.order


def test_product_is_pointwise(psd_1d, psd_2d, rng):
    """Test that the product of f(x) and g(x, y) equals f(x) g(x, y)."""
    fg = product(psd_1d, psd_2d)
    assert fg.order == psd_1d.order * psd_2d.order
    assert fg.group_names == ["x", "y"]
    points = rng.uniform(-1, 1, size=(25, 2))
    expected = evaluate(psd_1d, points[:, 0]) * evaluate(psd_2d, points)
    assert np.allclose(evaluate(fg, points), expected, rtol=1e-10, atol=1e-14)


def test_product_rejects_conflicting_groups(psd_2d):
    """Test that groups with the same name and different sizes cannot be merged."""
    with pytest.raises(DimensionError):
        union_groups(psd_2d.groups, (("y", 2),))


def test_compact_drops_zero_rows():
    """Test that anchors with zero weight rows are pruned."""
    model = GaussianPsdModel(
        anchors=[[0.0], [0.5], [1.0]],
        precision=[1.0],
        weights=np.diag([1.0, 0.0, 2.0]),
    )
    pruned = compact(model)
    assert pruned.order == 2
    assert evaluate(pruned, 0.25) == pytest.approx(evaluate(model, 0.25))


def test_markov_step_matches_quadrature(psd_2d, psd_1d, unit_interval):
    """Test that int Q(u, x) f(u) du over [-1, 1] matches quadrature at several x."""
    Q = rename_groups(psd_2d, {"x": "u", "y": "x"})
    g = markov_step(Q, psd_1d, unit_interval, over="u")
    assert g.order == Q.order
    assert g.group_names == ["x"]
    for x in (-0.5, 0.2, 0.9):
        expected, _ = quad(lambda u: evaluate(Q, [u, x]) * evaluate(psd_1d, u), -1, 1)
        assert evaluate(g, x) == pytest.approx(expected, rel=1e-8)


def test_markov_step_equals_product_then_marginalize(psd_2d, psd_1d, unit_interval, rng):
    """Test the fused step against the unfused product and marginalization."""
    Q = rename_groups(psd_2d, {"x": "u", "y": "x"})
    fused = markov_step(Q, psd_1d, unit_interval, over="u")
    joint = product(Q, rename_groups(psd_1d, {"x": "u"}))
    unfused = marginalize(joint, "u", unit_interval)
    xs = rng.uniform(-1, 1, size=15)
    assert np.allclose(evaluate(fused, xs), evaluate(unfused, xs), rtol=1e-9)


def test_from_gmm_is_a_normalized_mixture():
    """Test that the mixture embedding integrates to one and has the mixture mean."""
    model = from_gmm([0.3, 0.7], [-1.0, 2.0], [4.0])
    whole = Domain.whole_space()
    assert integral(model, whole) == pytest.approx(1.0, rel=1e-12)
    expected = 0.3 * np.sqrt(4 / np.pi) * np.exp(-4 * 1.0) + 0.7 * np.sqrt(4 / np.pi) * np.exp(-4 * 4.0)
    assert evaluate(model, 0.0) == pytest.approx(expected, rel=1e-12)


def test_from_gmm_rejects_bad_weights():
    """Test that mixture weights must be a probability vector."""
    with pytest.raises(InvalidModelError):
        from_gmm([0.5, 0.6], [0.0, 1.0], [1.0])


def test_mean_of_narrow_bump(unit_interval):
    """Test the mean of a narrow bump well inside the domain."""
    model = from_gmm([1.0], [0.3], [50.0])
    assert mean(model, unit_interval)[0] == pytest.approx(0.3, abs=1e-9)


def test_mean_of_truncated_bump(unit_interval):
    """Test the mean of a bump cut by the domain boundary against quadrature."""
    model = from_gmm([1.0], [0.9], [2.0])
    mass, _ = quad(lambda t: evaluate(model, t), -1, 1)
    first, _ = quad(lambda t: t * evaluate(model, t), -1, 1)
    assert mean(model, unit_interval)[0] == pytest.approx(first / mass, rel=1e-8)


def test_from_linear_square_is_a_square():
    """Test that the rank-one model is the square of a Gaussian expansion."""
    w = np.array([1.0, -0.5])
    anchors = np.array([[0.0], [0.7]])
    model = from_linear_square(w, anchors, [2.0])
    x = 0.3
    linear = w[0] * np.exp(-2 * x ** 2) + w[1] * np.exp(-2 * (x - 0.7) ** 2)
    assert evaluate(model, x) == pytest.approx(linear ** 2, rel=1e-12)


def test_flat_model_is_nearly_uniform(square):
    """Test that the flat model is close to 1 / volume on the domain."""
    model = flat_model(square)
    values = evaluate(model, np.array([[0.0, 0.0], [0.9, -0.9]]))
    assert np.allclose(values, 0.25, rtol=1e-6)
