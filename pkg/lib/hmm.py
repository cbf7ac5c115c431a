"""Hidden Markov models on a hypercube: kernels, simulation, optimal kernels and mixing estimates."""
import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from lib.errors import DegenerateModelError, InvalidModelError, MissingSamplerError
from lib.psd_core import Domain

logger = logging.getLogger(__name__)

MAX_PROPOSALS = 10_000

DensityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
SamplerFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class DensityKernel:
    """Conditional density K(cond, target); an initial law has dims (0, d)."""
    density: DensityFn
    dims: Tuple[int, int]
    sampler: Optional[SamplerFn] = None
    name: str = ""

    def __call__(self, cond, target) -> np.ndarray:
        target = np.asarray(target, dtype=float).reshape(-1, self.dims[1])
        cond = np.asarray(cond, dtype=float).reshape(-1, self.dims[0]) if self.dims[0] else np.zeros((len(target), 0))
        if len(cond) == 1 and len(target) > 1:
            cond = np.repeat(cond, len(target), axis=0)
        if len(target) == 1 and len(cond) > 1:
            target = np.repeat(target, len(cond), axis=0)
        return np.asarray(self.density(cond, target), dtype=float).reshape(-1)

    def sample(self, cond, rng: np.random.Generator) -> np.ndarray:
        if self.sampler is None:
            raise MissingSamplerError(f"Kernel {self.name or 'anonymous'} has no sampler")
        cond = np.asarray(cond, dtype=float)
        if cond.ndim != 2:
            cond = cond.reshape(-1, self.dims[0])
        return np.asarray(self.sampler(cond, rng), dtype=float).reshape(len(cond), self.dims[1])


@dataclass(frozen=True)
class LinearGaussian:
    """x' = F x + b + N(0, Sq), y = H x + c + N(0, Sg), x0 ~ N(mean0, cov0)."""
    F: np.ndarray
    b: np.ndarray
    Sq: np.ndarray
    H: np.ndarray
    c: np.ndarray
    Sg: np.ndarray
    mean0: np.ndarray
    cov0: np.ndarray


@dataclass(frozen=True)
class Hmm:
    transition: DensityKernel
    observation: DensityKernel
    initial: DensityKernel
    domain: Domain
    observation_domain: Domain
    name: str = ""
    linear: Optional[LinearGaussian] = None

    @property
    def state_dim(self) -> int:
        return self.transition.dims[1]

    @property
    def observation_dim(self) -> int:
        return self.observation.dims[1]


@dataclass
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    seed: int

    def __post_init__(self):
        if len(self.states) != len(self.observations) + 1:
            raise InvalidModelError(
                f"{len(self.states)} states need {len(self.states) - 1} observations, got {len(self.observations)}"
            )

    @property
    def steps(self) -> int:
        return len(self.observations)


@dataclass
class MixingEstimate:
    sigma: float
    xi: np.ndarray
    grid_x: np.ndarray
    slack: float


def rejection_sample(
    proposal: Callable[[np.ndarray, np.random.Generator], np.ndarray],
    accept: Callable[[np.ndarray], np.ndarray],
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw count samples with proposal(pending, rng) -> (len(pending), d) kept where accept is True.

    proposal must return rows aligned with the pending draws; each draw gets
    at most MAX_PROPOSALS attempts.
    """
    out = None
    pending = np.arange(count)
    for _ in range(MAX_PROPOSALS):
        draws = proposal(pending, rng)
        if out is None:
            out = np.empty((count, draws.shape[1]))
        ok = accept(draws)
        out[pending[ok]] = draws[ok]
        pending = pending[~ok]
        if len(pending) == 0:
            return out
    raise DegenerateModelError(f"Rejection sampler exceeded {MAX_PROPOSALS} proposals for {len(pending)} draws")


def _inside(domain: Domain) -> Callable[[np.ndarray], np.ndarray]:
    lo, hi = domain.limits(domain.dim)
    return lambda x: np.all((x > lo) & (x < hi), axis=1)


def _box_mass(means: np.ndarray, std: float, domain: Domain) -> np.ndarray:
    """Probability that N(mean, std^2 I) falls in the box, per row of means."""
    lo, hi = domain.limits(means.shape[1])
    return np.prod(norm.cdf((hi - means) / std) - norm.cdf((lo - means) / std), axis=1)


def _gaussian(target: np.ndarray, means: np.ndarray, std: float) -> np.ndarray:
    return np.prod(norm.pdf(target, loc=means, scale=std), axis=1)


def truncated_gaussian_kernel(
    mean_fn: Callable[[np.ndarray], np.ndarray], std: float, domain: Domain, dims: Tuple[int, int], name: str
) -> DensityKernel:
    """N(mean_fn(u), std^2 I) restricted and renormalized to the domain."""
    inside = _inside(domain)

    def density(u, x):
        means = mean_fn(u)
        return np.where(inside(x), _gaussian(x, means, std) / _box_mass(means, std, domain), 0.0)

    def sampler(u, rng):
        means = mean_fn(u)
        return rejection_sample(
            lambda idx, r: means[idx] + std * r.standard_normal((len(idx), dims[1])), inside, len(u), rng
        )

    return DensityKernel(density, dims, sampler, name)


def gaussian_observation(std: float, dim: int) -> DensityKernel:
    return DensityKernel(
        density=lambda x, y: _gaussian(y, x, std),
        dims=(dim, dim),
        sampler=lambda x, rng: x + std * rng.standard_normal(x.shape),
        name=f"gaussian_obs({std})",
    )


def truncated_initial(mean: float, std: float, domain: Domain) -> DensityKernel:
    dim = domain.dim
    center = np.full((1, dim), mean)
    return truncated_gaussian_kernel(lambda u: np.repeat(center, len(u), axis=0), std, domain, (0, dim), "initial")


def linear_gaussian(a: float = 0.6, q_std: float = 0.2, g_std: float = 0.2,
                    init_mean: float = 0.0, init_std: float = 0.5) -> Hmm:
    """AR(1) x' = a x + noise truncated to (-1, 1), observed with Gaussian noise."""
    domain = Domain.hypercube(1)
    transition = truncated_gaussian_kernel(lambda u: a * u, q_std, domain, (1, 1), "linear_gaussian")
    linear = LinearGaussian(
        F=np.array([[a]]), b=np.zeros(1), Sq=np.array([[q_std ** 2]]),
        H=np.eye(1), c=np.zeros(1), Sg=np.array([[g_std ** 2]]),
        mean0=np.array([init_mean]), cov0=np.array([[init_std ** 2]]),
    )
    return Hmm(
        transition=transition,
        observation=gaussian_observation(g_std, 1),
        initial=truncated_initial(init_mean, init_std, domain),
        domain=domain,
        observation_domain=Domain.hypercube(1, -1 - 4 * g_std, 1 + 4 * g_std),
        name="linear_gaussian",
        linear=linear,
    )


def mixing(a: float = 0.5, q_std: float = 0.5, g_std: float = 0.5, init_std: float = 0.5) -> Hmm:
    """Wide-noise truncated AR(1); its optimal kernels are mixing with a usable sigma."""
    return replace(linear_gaussian(a, q_std, g_std, 0.0, init_std), name="mixing")


def bimodal(scale: float = 0.7, gain: float = 2.0, offset: float = 0.25, q_std: float = 0.15,
            g_std: float = 0.3, init_std: float = 0.5) -> Hmm:
    """x' = scale * tanh(gain * x) +/- offset + noise, truncated to (-1, 1)."""
    domain = Domain.hypercube(1)
    inside = _inside(domain)

    def drift(u):
        return scale * np.tanh(gain * u)

    def density(u, x):
        m = drift(u)
        up, down = m + offset, m - offset
        mass = 0.5 * (_box_mass(up, q_std, domain) + _box_mass(down, q_std, domain))
        value = 0.5 * (_gaussian(x, up, q_std) + _gaussian(x, down, q_std))
        return np.where(inside(x), value / mass, 0.0)

    def sampler(u, rng):
        m = drift(u)

        def propose(idx, r):
            signs = np.where(r.random((len(idx), 1)) < 0.5, 1.0, -1.0)
            return m[idx] + signs * offset + q_std * r.standard_normal((len(idx), 1))

        return rejection_sample(propose, inside, len(u), rng)

    return Hmm(
        transition=DensityKernel(density, (1, 1), sampler, "bimodal"),
        observation=gaussian_observation(g_std, 1),
        initial=truncated_initial(0.0, init_std, domain),
        domain=domain,
        observation_domain=Domain.hypercube(1, -1 - 4 * g_std, 1 + 4 * g_std),
        name="bimodal",
    )


def rotation2d(contraction: float = 0.9, angle: float = np.pi / 6, q_std: float = 0.15,
               g_std: float = 0.2, init_std: float = 0.5) -> Hmm:
    """x' = contraction * Rot(angle) x + isotropic noise, truncated to (-1, 1)^2."""
    domain = Domain.hypercube(2)
    c, s = np.cos(angle), np.sin(angle)
    F = contraction * np.array([[c, -s], [s, c]])
    transition = truncated_gaussian_kernel(lambda u: u @ F.T, q_std, domain, (2, 2), "rotation2d")
    linear = LinearGaussian(
        F=F, b=np.zeros(2), Sq=q_std ** 2 * np.eye(2),
        H=np.eye(2), c=np.zeros(2), Sg=g_std ** 2 * np.eye(2),
        mean0=np.zeros(2), cov0=init_std ** 2 * np.eye(2),
    )
    return Hmm(
        transition=transition,
        observation=gaussian_observation(g_std, 2),
        initial=truncated_initial(0.0, init_std, domain),
        domain=domain,
        observation_domain=Domain.hypercube(2, -1 - 4 * g_std, 1 + 4 * g_std),
        name="rotation2d",
        linear=linear,
    )


SCENARIOS: Dict[str, Callable[..., Hmm]] = {
    "linear_gaussian": linear_gaussian,
    "bimodal": bimodal,
    "rotation2d": rotation2d,
    "mixing": mixing,
}


def make_scenario(name: str, **params) -> Hmm:
    if name not in SCENARIOS:
        raise InvalidModelError(f"Unknown scenario '{name}' (known: {sorted(SCENARIOS)})")
    return SCENARIOS[name](**params)


def simulate(hmm: Hmm, T: int, seed: int) -> Trajectory:
    """x0 ~ initial, x_t ~ Q(x_{t-1}, .), y_t ~ G(x_t, .); deterministic given seed."""
    if T < 0:
        raise InvalidModelError(f"T must be nonnegative, got {T}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    states = np.empty((T + 1, hmm.state_dim))
    observations = np.empty((T, hmm.observation_dim))
    states[0] = hmm.initial.sample(np.zeros((1, 0)), rng)[0]
    for t in range(1, T + 1):
        states[t] = hmm.transition.sample(states[t - 1:t], rng)[0]
        observations[t - 1] = hmm.observation.sample(states[t:t + 1], rng)[0]
    return Trajectory(states, observations, seed)


def optimal_kernel(hmm: Hmm, y) -> DensityKernel:
    """Unnormalized R(u, x) = Q(u, x) G(x, y)."""
    y = np.asarray(y, dtype=float).reshape(1, hmm.observation_dim)

    def density(u, x):
        return hmm.transition(u, x) * hmm.observation(x, np.repeat(y, len(x), axis=0))

    d = hmm.state_dim
    return DensityKernel(density, (d, d), None, f"optimal({y.ravel().tolist()})")


def estimate_mixing(R: DensityKernel, grid_u, grid_x) -> MixingEstimate:
    """Largest sigma with sigma xi(x) <= R(u, x) <= xi(x) / sigma on the grid, xi = sqrt(min max)."""
    d_in, d_out = R.dims
    grid_u = np.asarray(grid_u, dtype=float).reshape(-1, d_in)
    grid_x = np.asarray(grid_x, dtype=float).reshape(-1, d_out)
    nu, nx = len(grid_u), len(grid_x)
    values = R(np.repeat(grid_u, nx, axis=0), np.tile(grid_x, (nu, 1))).reshape(nu, nx)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise InvalidModelError("Kernel has negative or non-finite values on the grid")
    low = values.min(axis=0)
    high = values.max(axis=0)
    xi = np.sqrt(low * high)
    if np.any(low <= 0):
        logger.warning("Kernel vanishes on the grid; mixing coefficient is 0")
        return MixingEstimate(sigma=0.0, xi=xi, grid_x=grid_x, slack=0.0)
    sigma = float(np.min(np.sqrt(low / high)))
    slack = float(max(
        np.max(sigma * xi[None, :] - values),
        np.max(values - xi[None, :] / sigma),
        0.0,
    ))
    return MixingEstimate(sigma=sigma, xi=xi, grid_x=grid_x, slack=slack)


def mixing_over_observations(hmm: Hmm, observations: Sequence, grid_u, grid_x) -> float:
    """Smallest sigma over the optimal kernels of an observation sequence."""
    sigmas: List[float] = [estimate_mixing(optimal_kernel(hmm, y), grid_u, grid_x).sigma for y in observations]
    return min(sigmas) if sigmas else 1.0
