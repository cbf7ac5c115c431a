"""Learning PSD approximations of nonnegative functions from evaluations.

learn_rank_one fits the square root of the target by kernel ridge regression
on uniformly drawn anchors and squares the result (A = a a^T).
learn_generalized fits a sum of anisotropic Gaussians to the square root by
L-BFGS-B over weights, centers and precision factors.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

from lib.errors import InvalidModelError, LearningError
from lib.generalized_psd import GeneralizedPsdModel, g_from_linear_square
from lib.psd_core import Domain, GaussianPsdModel, Groups, from_linear_square, log_features

logger = logging.getLogger(__name__)

Evaluatable = Callable[[np.ndarray], np.ndarray]

NEGATIVE_TOL = 1e-12
MAX_JITTER = 1e-6


@dataclass(frozen=True, eq=False)
class LearnConfig:
    n: int
    M: int
    precision: np.ndarray
    reg: float
    domain: Domain
    seed: int = 0
    groups: Groups = ()

    def __post_init__(self):
        precision = np.atleast_1d(np.asarray(self.precision, dtype=float))
        if self.M < 1 or self.n < self.M:
            raise InvalidModelError(f"Need n >= M >= 1, got n={self.n}, M={self.M}")
        if not self.reg > 0:
            raise InvalidModelError(f"Regularizer must be positive, got {self.reg}")
        if not np.all(precision > 0):
            raise InvalidModelError(f"Precision must be positive, got {precision}")
        if not self.domain.is_bounded:
            raise InvalidModelError("Learning samples uniformly and needs a bounded domain")
        if precision.size == 1:
            precision = np.full(self.domain.dim, precision[0])
        if precision.size != self.domain.dim:
            raise InvalidModelError(f"Precision has {precision.size} entries for a {self.domain.dim}d domain")
        object.__setattr__(self, "precision", precision)


@dataclass(frozen=True)
class EpsilonSchedule:
    epsilon: float
    beta: float
    dim: int
    c_M: float = 1.0
    c_n: float = 1.0

    def __post_init__(self):
        if not self.beta > self.dim / 2:
            raise InvalidModelError(f"Smoothness beta={self.beta} must exceed d/2={self.dim / 2}")
        if not 0 < self.epsilon <= 1:
            raise InvalidModelError(f"epsilon must lie in (0, 1], got {self.epsilon}")


def hyperparams_from_epsilon(
    schedule: EpsilonSchedule, domain: Optional[Domain] = None, seed: int = 0, groups: Groups = ()
) -> LearnConfig:
    """Precision, regularizer, anchor count and sample size for a target accuracy."""
    eps, beta, d = schedule.epsilon, schedule.beta, schedule.dim
    log_inv = math.log(1 / eps)
    precision = eps ** (-2 / beta)
    reg = eps ** ((2 * beta + d) / beta)
    M = max(1, math.ceil(schedule.c_M * log_inv ** d * log_inv * eps ** (-d / beta)))
    n = max(math.ceil(schedule.c_n * eps ** (-2 * d / beta)), M)
    return LearnConfig(
        n=n,
        M=M,
        precision=np.full(d, precision),
        reg=reg,
        domain=domain or Domain.hypercube(d),
        seed=seed,
        groups=groups,
    )


def sampling_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent counter-based generators for training points and anchors."""
    points_seq, anchors_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.Philox(points_seq)), np.random.Generator(np.random.Philox(anchors_seq))


def uniform_points(rng: np.random.Generator, domain: Domain, count: int) -> np.ndarray:
    lo, hi = domain.limits(domain.dim)
    return rng.uniform(lo, hi, size=(count, domain.dim))


def kernel_matrix(X: np.ndarray, anchors: np.ndarray, precision: np.ndarray) -> np.ndarray:
    return np.exp(log_features(anchors, precision, X))


def solve_krr(anchors: np.ndarray, X: np.ndarray, y: np.ndarray, precision, reg: float) -> np.ndarray:
    """Weights a minimizing (1/n) ||K_nm a - y||^2 + reg a^T K_mm a via the normal equations."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    precision = np.broadcast_to(np.asarray(precision, dtype=float), (anchors.shape[1],))
    if X.shape[1] != anchors.shape[1] or y.size != X.shape[0]:
        raise InvalidModelError(f"Shapes disagree: anchors {anchors.shape}, X {X.shape}, y {y.shape}")
    if not reg > 0:
        raise InvalidModelError(f"Regularizer must be positive, got {reg}")
    n, M = X.shape[0], anchors.shape[0]
    K_nm = kernel_matrix(X, anchors, precision)
    K_mm = kernel_matrix(anchors, anchors, precision)
    H = K_nm.T @ K_nm / n + reg * K_mm
    H = (H + H.T) / 2
    rhs = K_nm.T @ y / n

    jitter = 1e-12 * np.trace(K_mm) / M
    while jitter <= MAX_JITTER:
        try:
            factor = cho_factor(H + jitter * np.eye(M))
            return cho_solve(factor, rhs)
        except LinAlgError:
            logger.debug("Normal equations not positive definite with jitter %.1e", jitter)
            jitter *= 10
    raise LearningError(f"Normal equations singular after jitter {MAX_JITTER:.0e}")


def sqrt_targets(values: np.ndarray) -> np.ndarray:
    """Square roots of function values, treating tiny negatives as zero."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise InvalidModelError("Target function returned non-finite values")
    if np.any(values < -NEGATIVE_TOL):
        raise InvalidModelError(f"Target function is negative ({values.min():.3e})")
    return np.sqrt(np.maximum(values, 0.0))


def learn_rank_one(f: Evaluatable, cfg: LearnConfig, anchors: Optional[np.ndarray] = None) -> GaussianPsdModel:
    """Fit sqrt(f) by kernel ridge regression and square it; deterministic given cfg.seed."""
    point_rng, anchor_rng = sampling_streams(cfg.seed)
    X = uniform_points(point_rng, cfg.domain, cfg.n)
    if anchors is None:
        anchors = uniform_points(anchor_rng, cfg.domain, cfg.M)
    anchors = np.asarray(anchors, dtype=float).reshape(-1, cfg.domain.dim)
    y = sqrt_targets(f(X))
    a = solve_krr(anchors, X, y, cfg.precision, cfg.reg)
    logger.debug("learn_rank_one: M=%d n=%d |a|=%.3e", len(anchors), cfg.n, np.linalg.norm(a))
    return from_linear_square(a, anchors, cfg.precision, groups=cfg.groups)


@dataclass
class InitStrategy:
    """Starting point for learn_generalized; unset fields are derived from the data."""
    centers: Optional[np.ndarray] = None
    precision: Optional[np.ndarray] = None
    alphas: Optional[np.ndarray] = None


@dataclass
class GeneralizedFit:
    model: GeneralizedPsdModel
    objective: float
    initial_objective: float
    iterations: int
    history: list = field(default_factory=list)


def _unpack(theta: np.ndarray, M: int, d: int):
    alphas = theta[:M]
    centers = theta[M:M + M * d].reshape(M, d)
    factors = theta[M + M * d:].reshape(M, d, d)
    return alphas, centers, factors


def _objective(theta: np.ndarray, X: np.ndarray, f_values: np.ndarray, M: int):
    """Mean squared error of g(x)^2 against f and its gradient in theta."""
    n, d = X.shape
    alphas, centers, factors = _unpack(theta, M, d)
    delta = X[:, None, :] - centers[None]               # (n, M, d)
    v = np.einsum("mab,nmb->nma", factors, delta)       # R_j (x_i - mu_j)
    e = np.exp(-(v ** 2).sum(axis=-1))                  # (n, M)
    g = e @ alphas
    r = g ** 2 - f_values
    value = float(np.mean(r ** 2))
    w = 4.0 / n * r * g
    grad_alpha = w @ e
    scaled = w[:, None] * alphas[None, :] * e           # (n, M)
    grad_centers = 2 * np.einsum("nm,mba,nmb->ma", scaled, factors, v)
    grad_factors = -2 * np.einsum("nm,nma,nmb->mab", scaled, v, delta)
    grad = np.concatenate([grad_alpha, grad_centers.reshape(-1), grad_factors.reshape(-1)])
    return value, grad


def _initial_parameters(init: InitStrategy, f: Evaluatable, X: np.ndarray, f_values: np.ndarray, M: int, domain: Domain):
    d = X.shape[1]
    if init.centers is not None:
        centers = np.asarray(init.centers, dtype=float).reshape(M, d)
    else:
        centers = X[np.argsort(-f_values, kind="stable")[:M]]
    if init.precision is None:
        widths = np.array([hi - lo for lo, hi in domain.bounds])
        precision = np.diag(4.0 / widths ** 2)
    else:
        precision = np.asarray(init.precision, dtype=float)
        if precision.ndim < 2:
            precision = np.diag(np.broadcast_to(precision, (d,)))
    precision = np.broadcast_to(precision, (M, d, d))
    try:
        # upper factor R with P = R^T R
        factors = np.swapaxes(np.linalg.cholesky(precision), -1, -2)
    except np.linalg.LinAlgError as e:
        raise InvalidModelError(f"Initial precision must be positive definite: {e}")
    if init.alphas is not None:
        alphas = np.asarray(init.alphas, dtype=float).reshape(M)
    else:
        alphas = sqrt_targets(f(centers))
    return np.concatenate([alphas, centers.reshape(-1), factors.reshape(-1)])


def fit_generalized(
    f: Evaluatable,
    M: int,
    init: Optional[InitStrategy] = None,
    budget: int = 200,
    seed: int = 0,
    domain: Optional[Domain] = None,
    n: int = 500,
    points: Optional[np.ndarray] = None,
    groups: Groups = (),
) -> GeneralizedFit:
    """Non-convex fit of sum_j alpha_j exp(-||R_j (x - mu_j)||^2) to sqrt(f)."""
    if M < 1:
        raise InvalidModelError(f"M must be positive, got {M}")
    init = init or InitStrategy()
    if points is None:
        if domain is None:
            raise InvalidModelError("Either a domain or explicit training points is required")
        point_rng, _ = sampling_streams(seed)
        X = uniform_points(point_rng, domain, n)
    else:
        X = np.atleast_2d(np.asarray(points, dtype=float))
    if domain is None:
        domain = Domain.box(list(zip(X.min(axis=0), X.max(axis=0) + 1e-12)))
    f_values = np.asarray(f(X), dtype=float).reshape(-1)
    sqrt_targets(f_values)
    f_values = np.maximum(f_values, 0.0)
    d = X.shape[1]

    theta0 = _initial_parameters(init, f, X, f_values, M, domain)
    initial_objective, _ = _objective(theta0, X, f_values, M)
    history = [initial_objective]
    theta, objective, iterations = theta0, initial_objective, 0

    if budget > 0:
        def fun(t):
            value, grad = _objective(t, X, f_values, M)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise LearningError(f"Non-finite objective {value} during generalized fit")
            return value, grad

        result = minimize(
            fun, theta0, jac=True, method="L-BFGS-B",
            callback=lambda t: history.append(_objective(t, X, f_values, M)[0]),
            options={"maxiter": budget},
        )
        theta, objective, iterations = result.x, float(result.fun), int(result.nit)
        logger.debug("learn_generalized: %d iterations, objective %.3e -> %.3e", iterations, initial_objective, objective)

    alphas, centers, factors = _unpack(theta, M, d)
    precisions = np.einsum("mba,mbc->mac", factors, factors)
    model = g_from_linear_square(alphas, centers, precisions, groups=groups)
    return GeneralizedFit(model, objective, initial_objective, iterations, history)


def learn_generalized(
    f: Evaluatable,
    M: int,
    init: Optional[InitStrategy] = None,
    budget: int = 200,
    seed: int = 0,
    domain: Optional[Domain] = None,
    n: int = 500,
    groups: Groups = (),
) -> GeneralizedPsdModel:
    return fit_generalized(f, M, init, budget, seed, domain, n, groups=groups).model


def init_anchors_conditional(f: Evaluatable, grid_u, grid_v) -> np.ndarray:
    """Centers (u, argmax_v f(u, v)) for each u on grid_u; ties go to the first v."""
    grid_u = np.asarray(grid_u, dtype=float)
    grid_v = np.asarray(grid_v, dtype=float)
    grid_u = grid_u.reshape(len(grid_u), -1)
    grid_v = grid_v.reshape(len(grid_v), -1)
    if len(grid_u) == 0 or len(grid_v) == 0:
        raise InvalidModelError("Grids must be nonempty")
    centers = []
    for u in grid_u:
        pairs = np.hstack([np.broadcast_to(u, (len(grid_v), len(u))), grid_v])
        best = int(np.argmax(np.asarray(f(pairs), dtype=float)))
        centers.append(np.concatenate([u, grid_v[best]]))
    return np.array(centers)
