"""Bayes filtering: the PSD filter for both model families and the oracle baselines.

Group conventions: the transition model is over ("u", "x") with u the
previous state, the observation model over ("x", "y").
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import multivariate_normal

from lib.errors import (
    DegenerateModelError,
    FilterError,
    GridTooLargeError,
    KalmanError,
    PsdFilterError,
    WeightCollapseError,
    ZeroEvidenceError,
)
from lib.generalized_psd import GeneralizedPsdModel, compress, embed_psd, g_filter_step
from lib.grid import GridDensity, tensor_points
from lib.hmm import Hmm
from lib.metrics import TV_HILBERT_CONSTANT, Density, as_density, birkhoff_bound
from lib.psd_core import (
    Domain,
    GaussianPsdModel,
    compact,
    evaluate,
    group_columns,
    markov_step,
    normalize,
    partial_eval,
    product,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_CELLS = 4096


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1) > 1e-12:
            raise DegenerateModelError("Particle weights must be nonnegative and sum to 1")

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles


Posterior = Union[GaussianPsdModel, GeneralizedPsdModel, KalmanState, ParticleCloud, GridDensity]


@dataclass
class FilterTrace:
    method: str
    posteriors: List[Posterior] = field(default_factory=list)
    log_normalizers: List[float] = field(default_factory=list)
    orders: List[int] = field(default_factory=list)
    wall_ns: List[int] = field(default_factory=list)
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def append(self, posterior: Posterior, log_z: float, order: int, wall_ns: int) -> None:
        self.posteriors.append(posterior)
        self.log_normalizers.append(float(log_z))
        self.orders.append(int(order))
        self.wall_ns.append(int(wall_ns))

    @property
    def steps(self) -> int:
        return len(self.posteriors) - 1


def _order(posterior: Posterior) -> int:
    if isinstance(posterior, (GaussianPsdModel, GeneralizedPsdModel)):
        return posterior.order
    if isinstance(posterior, ParticleCloud):
        return len(posterior.weights)
    if isinstance(posterior, GridDensity):
        return posterior.values.size
    return 1


def _run(method: str, prior: Posterior, observations: Sequence, step_fn) -> FilterTrace:
    """Drive step_fn(posterior, y, k) -> (posterior, Z) and attach the step index to failures."""
    trace = FilterTrace(method)
    trace.append(prior, 0.0, _order(prior), 0)
    posterior = prior
    for k, y in enumerate(observations, start=1):
        start = time.perf_counter_ns()
        try:
            posterior, z = step_fn(posterior, y, k)
        except ZeroEvidenceError:
            raise
        except (PsdFilterError, LinAlgError, np.linalg.LinAlgError) as e:
            raise FilterError(k, e) from e
        trace.append(posterior, math.log(z) if z > 0 else -math.inf, _order(posterior),
                     time.perf_counter_ns() - start)
    return trace


def psd_filter_step(
    prior: GaussianPsdModel,
    Q: GaussianPsdModel,
    G: GaussianPsdModel,
    y,
    domain: Domain,
    step: int = 0,
    prune: bool = False,
) -> Tuple[GaussianPsdModel, float]:
    """One Bayes step in closed form; the result has order Q.order * G.order.

    With prune, anchors with negligible weight rows are dropped after the
    product, so the order may fall below Q.order * G.order.
    """
    predicted = markov_step(Q, prior, domain, over="u")
    likelihood = partial_eval(G, "y", y)
    joint = product(predicted, likelihood)
    if prune:
        joint = compact(joint)
    try:
        return normalize(joint, domain)
    except DegenerateModelError:
        raise ZeroEvidenceError(step, np.asarray(y).tolist())


def psd_filter_run(
    prior: GaussianPsdModel,
    Q: GaussianPsdModel,
    G: GaussianPsdModel,
    observations: Sequence,
    domain: Domain,
    prune: bool = False,
) -> FilterTrace:
    return _run(
        "psd", prior, observations,
        lambda post, y, k: psd_filter_step(post, Q, G, y, domain, step=k, prune=prune),
    )


def generalized_filter_run(
    prior: Union[GaussianPsdModel, GeneralizedPsdModel],
    q: GeneralizedPsdModel,
    g: GeneralizedPsdModel,
    observations: Sequence,
    target_order: int,
    domain: Optional[Domain],
    seed: int = 0,
    compress_options: Optional[Dict[str, Any]] = None,
) -> FilterTrace:
    """Generalized filter steps, compressing to target_order whenever the order exceeds it."""
    if isinstance(prior, GaussianPsdModel):
        prior = embed_psd(prior)
    step_seeds = np.random.SeedSequence(seed).generate_state(max(1, len(observations)))
    options = compress_options or {}
    compressions = []

    def step(post, y, k):
        result, z = g_filter_step(post, q, g, y, step=k)
        if result.order > target_order:
            if domain is None:
                raise DegenerateModelError(f"Order {result.order} exceeds target {target_order} and no domain to refit on")
            logger.debug("Step %d: compressing order %d to %d", k, result.order, target_order)
            compressed = compress(result, target_order, domain, int(step_seeds[k - 1]), **options)
            result = embed_psd(compressed)
            compressions.append(k)
        return result, z

    trace = _run("generalized", prior, observations, step)
    trace.diagnostics["compressed_steps"] = compressions
    return trace


def kalman_filter_run(F, b, Sq, H, c, Sg, mean0, cov0, observations: Sequence) -> FilterTrace:
    """Exact predict/update recursion for x' = F x + b + N(0, Sq), y = H x + c + N(0, Sg)."""
    F, Sq, H, Sg = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (F, Sq, H, Sg))
    b, c = (np.asarray(v, dtype=float).reshape(-1) for v in (b, c))
    state = KalmanState(np.asarray(mean0, dtype=float).reshape(-1), np.atleast_2d(np.asarray(cov0, dtype=float)))

    def step(post: KalmanState, y, k):
        y = np.asarray(y, dtype=float).reshape(-1)
        mean = F @ post.mean + b
        cov = F @ post.cov @ F.T + Sq
        S = H @ cov @ H.T + Sg
        try:
            factor = cho_factor(S)
        except LinAlgError as e:
            raise KalmanError(f"Innovation covariance is singular at step {k}: {e}")
        innovation = y - H @ mean - c
        gain = cho_solve(factor, H @ cov).T
        mean = mean + gain @ innovation
        cov = cov - gain @ H @ cov
        evidence = multivariate_normal.pdf(innovation, mean=np.zeros(len(y)), cov=S)
        return KalmanState(mean, (cov + cov.T) / 2), float(evidence)

    return _run("kalman", state, observations, step)


def kalman_hmm(hmm: Hmm, observations: Sequence) -> FilterTrace:
    if hmm.linear is None:
        raise DegenerateModelError(f"Scenario {hmm.name} has no linear-Gaussian form")
    lin = hmm.linear
    return kalman_filter_run(lin.F, lin.b, lin.Sq, lin.H, lin.c, lin.Sg, lin.mean0, lin.cov0, observations)


def particle_filter_run(hmm: Hmm, N: int, observations: Sequence, seed: int) -> FilterTrace:
    """Bootstrap filter: multinomial resampling, propagation through Q, weighting by G."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    particles = hmm.initial.sample(np.zeros((N, 0)), rng)
    cloud = ParticleCloud(particles, np.full(N, 1.0 / N))

    def step(post: ParticleCloud, y, k):
        ancestors = rng.choice(N, size=N, p=post.weights)
        moved = hmm.transition.sample(post.particles[ancestors], rng)
        y = np.asarray(y, dtype=float).reshape(1, -1)
        raw = hmm.observation(moved, np.repeat(y, N, axis=0))
        total = raw.sum()
        if not total > 0:
            raise WeightCollapseError(f"All {N} particle weights vanished at step {k}")
        weights = raw / total
        weights = weights / weights.sum()
        return ParticleCloud(moved, weights), float(total / N)

    trace = _run("particle", cloud, observations, step)
    return trace


def model_kernel(model: GaussianPsdModel, cond: str = "u", target: str = "x") -> Callable:
    """A two-group PSD model as a kernel callable (cond (n, a), target (n, b)) -> (n,)."""
    cond_cols = group_columns(model.groups, cond)
    target_cols = group_columns(model.groups, target)

    def density(c, t):
        c = np.asarray(c, dtype=float).reshape(-1, len(cond_cols))
        t = np.asarray(t, dtype=float).reshape(-1, len(target_cols))
        points = np.empty((max(len(c), len(t)), model.dim))
        points[:, cond_cols] = c
        points[:, target_cols] = t
        return evaluate(model, points)

    return density


def transition_matrix(transition: Callable, points: np.ndarray, chunk: int = 256) -> np.ndarray:
    """K[a, b] = transition(points[a], points[b])."""
    N = len(points)
    K = np.empty((N, N))
    for start in range(0, N, chunk):
        rows = points[start:start + chunk]
        cond = np.repeat(rows, N, axis=0)
        target = np.tile(points, (len(rows), 1))
        K[start:start + chunk] = np.asarray(transition(cond, target), dtype=float).reshape(len(rows), N)
    return K


def grid_prior(prior: Union[Density, GridDensity], domain: Domain, resolution: int) -> GridDensity:
    if isinstance(prior, GridDensity) and prior.resolution == resolution:
        return prior.normalized()
    return GridDensity.from_function(as_density(prior), domain, resolution).normalized()


def grid_filter_step(
    posterior: GridDensity, K: np.ndarray, observation: Callable, y, step: int = 0
) -> Tuple[GridDensity, float]:
    points = posterior.points
    cell = posterior.cell_volume
    predicted = (posterior.values * cell) @ K
    y = np.asarray(y, dtype=float).reshape(1, -1)
    likelihood = np.asarray(observation(points, np.repeat(y, len(points), axis=0)), dtype=float)
    unnormalized = predicted * likelihood
    z = float(unnormalized.sum() * cell)
    if not z > 0:
        raise ZeroEvidenceError(step, y.ravel().tolist())
    return GridDensity(posterior.domain, posterior.resolution, unnormalized / z), z


def grid_filter_run(
    transition: Callable,
    observation: Callable,
    prior: Union[Density, GridDensity],
    observations: Sequence,
    domain: Domain,
    resolution: int,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> FilterTrace:
    """Dense Bayes recursion on the midpoint grid; the brute-force oracle."""
    if resolution ** domain.dim > max_cells:
        raise GridTooLargeError(f"{resolution}^{domain.dim} cells exceeds the cap of {max_cells}")
    start = time.perf_counter_ns()
    start_density = grid_prior(prior, domain, resolution)
    K = transition_matrix(transition, tensor_points(domain, resolution, max_cells))
    logger.debug("Grid transition matrix %s built in %.2fs", K.shape, (time.perf_counter_ns() - start) / 1e9)
    return _run(
        "grid", start_density, observations,
        lambda post, y, k: grid_filter_step(post, K, observation, y, step=k),
    )


def grid_filter_hmm(hmm: Hmm, observations: Sequence, resolution: int, max_cells: int = DEFAULT_MAX_CELLS,
                    prior: Optional[Density] = None) -> FilterTrace:
    initial = prior if prior is not None else (lambda x: hmm.initial(np.zeros((len(x), 0)), x))
    return grid_filter_run(hmm.transition, hmm.observation, initial, observations, hmm.domain, resolution, max_cells)


def posterior_density(posterior: Posterior, domain: Domain, resolution: int) -> GridDensity:
    """Grid representation of any posterior type, normalized on the domain."""
    if isinstance(posterior, GridDensity):
        if posterior.resolution == resolution:
            return posterior.normalized()
        return GridDensity.from_function(posterior, domain, resolution).normalized()
    if isinstance(posterior, ParticleCloud):
        return GridDensity.from_samples(posterior.particles, posterior.weights, domain, resolution)
    if isinstance(posterior, KalmanState):
        dist = multivariate_normal(mean=posterior.mean, cov=posterior.cov)
        return GridDensity.from_function(lambda x: np.atleast_1d(dist.pdf(x)), domain, resolution).normalized()
    return GridDensity.from_function(as_density(posterior), domain, resolution).normalized()


def posterior_mean(posterior: Posterior, domain: Domain, resolution: int = 512) -> np.ndarray:
    if isinstance(posterior, KalmanState):
        return posterior.mean
    if isinstance(posterior, ParticleCloud):
        return posterior.mean()
    return posterior_density(posterior, domain, resolution).mean()


def trace_tv(trace: FilterTrace, oracle: FilterTrace, domain: Domain, resolution: int) -> List[float]:
    """Per-step TV between a trace and an oracle trace on a common grid."""
    values = []
    for mine, reference in zip(trace.posteriors, oracle.posteriors):
        p = posterior_density(mine, domain, resolution)
        q = posterior_density(reference, domain, resolution)
        values.append(float(np.abs(p.values - q.values).sum() * p.cell_volume))
    return values


@dataclass
class ErrorBound:
    step: int
    forgetting: float
    accumulation: float
    delta: float

    @property
    def total(self) -> float:
        return self.forgetting + self.accumulation


def stability_constant(sigma: float) -> float:
    return TV_HILBERT_CONSTANT / sigma ** 2


def error_decomposition(deltas: Sequence[float], sigma: float, initial_tv: float) -> List[ErrorBound]:
    """Bounds on TV(pi_n, pi_hat_n) from the per-step errors delta_1..delta_n.

    forgetting = C tau^n TV(pi_hat_0, nu); accumulation = delta_n + C sum_{k<n} tau^(n-k-1) delta_k,
    with C = (2 / log 3) / sigma^2 and tau = birkhoff_bound(sigma).
    """
    C = stability_constant(sigma)
    tau = birkhoff_bound(sigma)
    bounds = []
    for n in range(1, len(deltas) + 1):
        past = sum(tau ** (n - k - 1) * deltas[k - 1] for k in range(1, n))
        bounds.append(ErrorBound(n, C * tau ** n * initial_tv, deltas[n - 1] + C * past, deltas[n - 1]))
    return bounds


def one_step_errors(trace: FilterTrace, hmm: Hmm, observations: Sequence, resolution: int,
                    max_cells: int = DEFAULT_MAX_CELLS) -> List[float]:
    """delta_k = TV(pi_hat_k, exact Bayes step of pi_hat_{k-1}) using the true kernels on a grid."""
    domain = hmm.domain
    if resolution ** domain.dim > max_cells:
        raise GridTooLargeError(f"{resolution}^{domain.dim} cells exceeds the cap of {max_cells}")
    K = transition_matrix(hmm.transition, tensor_points(domain, resolution, max_cells))
    deltas = []
    for k, y in enumerate(observations, start=1):
        previous = posterior_density(trace.posteriors[k - 1], domain, resolution)
        exact, _ = grid_filter_step(previous, K, hmm.observation, y, step=k)
        approx = posterior_density(trace.posteriors[k], domain, resolution)
        deltas.append(float(np.abs(exact.values - approx.values).sum() * exact.cell_volume))
    return deltas


def fit_log_slope(values: Sequence[float], start: int = 0, stop: Optional[int] = None, floor: float = 1e-12) -> float:
    """Least-squares slope of log(values[k]) against k over [start, stop), ignoring values <= floor."""
    values = np.asarray(values, dtype=float)
    stop = len(values) if stop is None else min(stop, len(values))
    steps = np.arange(start, stop)
    window = values[start:stop]
    keep = window > floor
    if keep.sum() < 2:
        return -math.inf
    return float(np.polyfit(steps[keep], np.log(window[keep]), 1)[0])
