"""Generalized Gaussian PSD Models: f(x) = Tr(A B(x)) with full per-entry precisions.

Entry (i, j) of B is exp(C_ij) * exp(-(x - mu_ij)^T P_ij (x - mu_ij)). All
operations below act entrywise on (C, P, mu) and keep A (or a Kronecker
product of weights) untouched, so they are exact in closed form.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from lib.errors import (
    DegenerateModelError,
    DimensionError,
    InvalidModelError,
    SingularPrecisionError,
    ZeroEvidenceError,
)
from lib.psd_core import (
    PSD_TOL,
    Domain,
    GaussianPsdModel,
    Groups,
    as_points,
    check_psd,
    group_columns,
    normalize,
    union_groups,
)

logger = logging.getLogger(__name__)

ENTRY_TOL = 1e-9
JITTER_SCALE = 1e-12
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True, eq=False)
class GeneralizedPsdModel:
    weights: np.ndarray
    log_scales: np.ndarray
    precisions: np.ndarray
    centers: np.ndarray
    groups: Groups = ()
    jittered: bool = False

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        order = weights.shape[0]
        if weights.ndim != 2 or weights.shape != (order, order) or order == 0:
            raise InvalidModelError(f"Weights must be a non-empty square matrix, got {weights.shape}")
        check_psd(weights)
        log_scales = np.array(self.log_scales, dtype=float)
        precisions = np.array(self.precisions, dtype=float)
        centers = np.array(self.centers, dtype=float)
        if centers.ndim != 3 or centers.shape[:2] != (order, order):
            raise InvalidModelError(f"Centers must be {order} x {order} x d, got {centers.shape}")
        dim = centers.shape[2]
        if log_scales.shape != (order, order):
            raise InvalidModelError(f"Log scales must be {order} x {order}, got {log_scales.shape}")
        if precisions.shape != (order, order, dim, dim):
            raise InvalidModelError(f"Precisions must be {(order, order, dim, dim)}, got {precisions.shape}")
        if np.any(np.isnan(log_scales)) or np.any(log_scales == np.inf):
            raise InvalidModelError("Log scales must not be NaN or +inf")
        if not (np.all(np.isfinite(precisions)) and np.all(np.isfinite(centers))):
            raise InvalidModelError("Precisions and centers must be finite")

        finite = np.isfinite(log_scales)
        if np.any(finite != finite.T) or np.any(
            np.abs(np.where(finite, log_scales - log_scales.T, 0.0))
            > ENTRY_TOL * np.maximum(1.0, np.abs(np.where(finite, log_scales, 0.0)))
        ):
            raise InvalidModelError("Log scales must be symmetric (C_ij = C_ji)")
        scale = np.maximum(1.0, np.abs(precisions).max(initial=0.0))
        if np.abs(precisions - precisions.transpose(1, 0, 2, 3)).max() > ENTRY_TOL * scale:
            raise InvalidModelError("Precisions must satisfy P_ij = P_ji")
        if np.abs(precisions - precisions.transpose(0, 1, 3, 2)).max() > ENTRY_TOL * scale:
            raise InvalidModelError("Each precision matrix must be symmetric")
        if np.abs(centers - centers.transpose(1, 0, 2)).max(initial=0.0) > ENTRY_TOL * max(
            1.0, np.abs(centers).max(initial=0.0)
        ):
            raise InvalidModelError("Centers must satisfy x_ij = x_ji")

        precisions = (precisions + precisions.transpose(0, 1, 3, 2)) / 2
        precisions = (precisions + precisions.transpose(1, 0, 2, 3)) / 2
        eigenvalues = np.linalg.eigvalsh(precisions)
        traces = np.trace(precisions, axis1=2, axis2=3)
        if np.any(eigenvalues.min(axis=-1) < -PSD_TOL * np.maximum(traces, 1.0)):
            raise InvalidModelError("Precision matrices must be positive semidefinite")
        centers = (centers + centers.transpose(1, 0, 2)) / 2
        log_scales = np.where(finite, (log_scales + log_scales.T) / 2, -np.inf)

        groups = tuple((str(n), int(s)) for n, s in self.groups) or (("x", dim),)
        if sum(s for _, s in groups) != dim:
            raise InvalidModelError(f"Group dimensions {groups} do not sum to {dim}")
        for name, arr in (("weights", weights), ("log_scales", log_scales),
                          ("precisions", precisions), ("centers", centers)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "groups", groups)

    @property
    def order(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[2]

    @property
    def group_names(self):
        return [name for name, _ in self.groups]


@dataclass(frozen=True)
class ConditionalGaussianLinear:
    """p(y | x) = N(y; F x + b, Sigma)."""
    F: np.ndarray
    b: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if b.size != F.shape[0] or cov.shape != (F.shape[0], F.shape[0]):
            raise DimensionError(f"Shapes disagree: F {F.shape}, b {b.shape}, Sigma {cov.shape}")
        try:
            cho_factor(cov)
        except LinAlgError as e:
            raise InvalidModelError(f"Covariance is not positive definite: {e}")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "cov", cov)

    @property
    def dim_in(self) -> int:
        return self.F.shape[1]

    @property
    def dim_out(self) -> int:
        return self.F.shape[0]

    def density(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim_in)
        y = np.asarray(y, dtype=float).reshape(-1, self.dim_out)
        resid = x @ self.F.T + self.b - y
        factor = cho_factor(self.cov)
        quad = np.einsum("ni,ni->n", resid, cho_solve(factor, resid.T).T)
        logdet = 2 * np.log(np.diag(factor[0])).sum()
        return np.exp(-0.5 * quad - 0.5 * logdet - 0.5 * self.dim_out * np.log(2 * np.pi))


def _batched_cholesky(P: np.ndarray, what: str) -> Tuple[np.ndarray, bool]:
    """Cholesky factors of a stack of matrices, adding jitter when a factorization fails."""
    try:
        return np.linalg.cholesky(P), False
    except np.linalg.LinAlgError:
        pass
    d = P.shape[-1]
    traces = np.trace(P, axis1=-2, axis2=-1)
    jitter = JITTER_SCALE * np.maximum(traces, 1.0) / d
    logger.debug("Adding jitter to %s blocks (max %.3e)", what, float(np.max(jitter)))
    try:
        return np.linalg.cholesky(P + jitter[..., None, None] * np.eye(d)), True
    except np.linalg.LinAlgError as e:
        raise SingularPrecisionError(f"Singular {what} precision block: {e}")


def _chol_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (L L^T) z = rhs for stacks; rhs has a trailing vector or matrix axis."""
    vector = rhs.ndim == L.ndim - 1
    b = rhs[..., None] if vector else rhs
    z = np.linalg.solve(L, b)
    z = np.linalg.solve(np.swapaxes(L, -1, -2), z)
    return z[..., 0] if vector else z


def _chol_logdet(L: np.ndarray) -> np.ndarray:
    return 2 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)


def _log_gaussian_normalizer(P: np.ndarray) -> np.ndarray:
    """log C(P) = (d/2) log(pi) - (1/2) log det P for a stack of precisions."""
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as e:
        raise SingularPrecisionError(f"Precision matrix is not positive definite: {e}")
    return 0.5 * P.shape[-1] * np.log(np.pi) - 0.5 * _chol_logdet(L)


def g_evaluate(model: GeneralizedPsdModel, x) -> Union[float, np.ndarray]:
    """Tr(A B(x)) at a point or at an (n, d) array of points."""
    points, single = as_points(x, model.dim)
    n = points.shape[0]
    order = model.order
    rows = max(1, _CHUNK_ELEMENTS // max(1, order * order * model.dim))
    values = np.empty(n)
    magnitudes = np.empty(n)
    for start in range(0, n, rows):
        diff = points[start:start + rows, None, None, :] - model.centers[None]
        quad = np.einsum("nijd,ijde,nije->nij", diff, model.precisions, diff)
        logb = model.log_scales[None] - quad
        shift = logb.reshape(len(diff), -1).max(axis=1)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        b = np.exp(logb - shift[:, None, None])
        with np.errstate(over="ignore"):
            factor = np.exp(shift)
        values[start:start + rows] = factor * np.einsum("ij,nij->n", model.weights, b)
        magnitudes[start:start + rows] = factor * np.einsum("ij,nij->n", np.abs(model.weights), b)
    tolerance = PSD_TOL * np.maximum(1.0, magnitudes)
    if np.any(values < -tolerance):
        raise InvalidModelError(f"Model evaluates to {values.min():.3e} < 0 beyond rounding")
    values = np.maximum(values, 0.0)
    return float(values[0]) if single else values


def _entry_masses(model: GeneralizedPsdModel) -> Tuple[np.ndarray, float]:
    """A_ij * exp(C_ij) * C(P_ij) as (shifted array, shift)."""
    log_norm = _log_gaussian_normalizer(model.precisions)
    log_terms = model.log_scales + log_norm
    finite = log_terms[np.isfinite(log_terms)]
    shift = float(finite.max()) if finite.size else 0.0
    return model.weights * np.exp(log_terms - shift), shift


def g_log_integral(model: GeneralizedPsdModel) -> float:
    terms, shift = _entry_masses(model)
    total = float(terms.sum())
    if not total > 0:
        raise DegenerateModelError(f"Model has non-positive mass {total:.3e}")
    return float(np.log(total) + shift)


def g_integral(model: GeneralizedPsdModel) -> float:
    """Integral over all of R^d; every P_ij must be positive definite."""
    terms, shift = _entry_masses(model)
    total = float(terms.sum())
    magnitude = float(np.abs(terms).sum())
    if total < 0 and total >= -PSD_TOL * max(magnitude, 1e-300):
        total = 0.0
    if total < 0:
        raise InvalidModelError(f"Negative integral {total:.3e}")
    return float(total * np.exp(shift)) if total > 0 else 0.0


def g_normalize(model: GeneralizedPsdModel) -> Tuple[GeneralizedPsdModel, float]:
    log_mass = g_log_integral(model)
    return replace(model, log_scales=model.log_scales - log_mass), float(np.exp(log_mass))


def _split(model: GeneralizedPsdModel, group: str) -> Tuple[np.ndarray, np.ndarray]:
    columns = group_columns(model.groups, group)
    if len(columns) == model.dim:
        raise DimensionError(f"Group '{group}' covers every coordinate")
    keep = np.setdiff1d(np.arange(model.dim), columns)
    return keep, columns


def g_partial_eval(model: GeneralizedPsdModel, group: str, value) -> GeneralizedPsdModel:
    """h(x) = f(x, y0) by completing the square in the y block of each entry."""
    xs, ys = _split(model, group)
    y0 = np.asarray(value, dtype=float).reshape(-1)
    if y0.size != len(ys):
        raise DimensionError(f"Value has {y0.size} coordinates, group '{group}' has {len(ys)}")
    P = model.precisions
    Pxx = P[:, :, xs][:, :, :, xs]
    Pxy = P[:, :, xs][:, :, :, ys]
    Pyy = P[:, :, ys][:, :, :, ys]
    r = y0 - model.centers[:, :, ys]
    L, jittered = _batched_cholesky(Pxx, "x")
    coupling = np.einsum("ijab,ijb->ija", Pxy, r)
    shift = _chol_solve(L, coupling)
    centers = model.centers[:, :, xs] - shift
    schur_term = np.einsum("ija,ijab,ijb->ij", r, Pyy, r) - np.einsum("ija,ija->ij", coupling, shift)
    return GeneralizedPsdModel(
        weights=model.weights,
        log_scales=model.log_scales - schur_term,
        precisions=Pxx,
        centers=centers,
        groups=tuple(g for g in model.groups if g[0] != group),
        jittered=model.jittered or jittered,
    )


def g_marginalize(model: GeneralizedPsdModel, group: str) -> GeneralizedPsdModel:
    """Integrate a group out over all of R^{d_y}; precisions become Schur complements."""
    xs, ys = _split(model, group)
    P = model.precisions
    Pxx = P[:, :, xs][:, :, :, xs]
    Pxy = P[:, :, xs][:, :, :, ys]
    Pyy = P[:, :, ys][:, :, :, ys]
    try:
        L = np.linalg.cholesky(Pyy)
    except np.linalg.LinAlgError as e:
        raise SingularPrecisionError(f"Cannot marginalize '{group}': singular precision block ({e})")
    schur = Pxx - np.einsum("ijab,ijbc->ijac", Pxy, _chol_solve(L, np.swapaxes(Pxy, -1, -2)))
    schur = (schur + np.swapaxes(schur, -1, -2)) / 2
    log_scales = model.log_scales + 0.5 * len(ys) * np.log(np.pi) - 0.5 * _chol_logdet(L)
    return GeneralizedPsdModel(
        weights=model.weights,
        log_scales=log_scales,
        precisions=schur,
        centers=model.centers[:, :, xs],
        groups=tuple(g for g in model.groups if g[0] != group),
        jittered=model.jittered,
    )


def _lift(model: GeneralizedPsdModel, groups: Groups) -> Tuple[np.ndarray, np.ndarray]:
    dim = sum(size for _, size in groups)
    M = model.order
    precisions = np.zeros((M, M, dim, dim))
    centers = np.zeros((M, M, dim))
    for name_a, _ in model.groups:
        ta, sa = group_columns(groups, name_a), group_columns(model.groups, name_a)
        centers[:, :, ta] = model.centers[:, :, sa]
        for name_b, _ in model.groups:
            tb, sb = group_columns(groups, name_b), group_columns(model.groups, name_b)
            precisions[:, :, ta[:, None], tb[None, :]] = model.precisions[:, :, sa[:, None], sb[None, :]]
    return precisions, centers


def _combine(Pa: np.ndarray, ma: np.ndarray, Pb: np.ndarray, mb: np.ndarray, what: str):
    """Product of exp(-(x-ma)^T Pa (x-ma)) and exp(-(x-mb)^T Pb (x-mb)) for stacks of entries.

    Returns the combined precision, center, log constant and a jitter flag.
    """
    P = Pa + Pb
    L, jittered = _batched_cholesky(P, what)
    h = np.einsum("...ab,...b->...a", Pa, ma) + np.einsum("...ab,...b->...a", Pb, mb)
    center = _chol_solve(L, h)
    delta = ma - mb
    pulled = _chol_solve(L, np.einsum("...ab,...b->...a", Pb, delta))
    log_constant = -np.einsum("...a,...ab,...b->...", delta, Pa, pulled)
    return P, center, log_constant, jittered


def g_product(f: GeneralizedPsdModel, g: GeneralizedPsdModel) -> GeneralizedPsdModel:
    """Pointwise product over the union of groups; entry (i*M2 + k, j*M2 + l)."""
    groups = union_groups(f.groups, g.groups)
    Pf, mf = _lift(f, groups)
    Pg, mg = _lift(g, groups)
    M1, M2 = f.order, g.order
    D = Pf.shape[-1]
    # axes (i, k, j, l)
    Pa = np.broadcast_to(Pf[:, None, :, None], (M1, M2, M1, M2, D, D))
    Pb = np.broadcast_to(Pg[None, :, None, :], (M1, M2, M1, M2, D, D))
    ma = np.broadcast_to(mf[:, None, :, None], (M1, M2, M1, M2, D))
    mb = np.broadcast_to(mg[None, :, None, :], (M1, M2, M1, M2, D))
    P, centers, log_constant, jittered = _combine(Pa, ma, Pb, mb, "product")
    log_scales = f.log_scales[:, None, :, None] + g.log_scales[None, :, None, :] + log_constant
    M = M1 * M2
    weights = np.kron(f.weights, g.weights)
    return GeneralizedPsdModel(
        weights=(weights + weights.T) / 2,
        log_scales=log_scales.reshape(M, M),
        precisions=P.reshape(M, M, D, D),
        centers=centers.reshape(M, M, D),
        groups=groups,
        jittered=f.jittered or g.jittered or jittered,
    )


def g_rename_groups(model: GeneralizedPsdModel, mapping: Dict[str, str]) -> GeneralizedPsdModel:
    return replace(model, groups=tuple((mapping.get(n, n), s) for n, s in model.groups))


def g_scale(model: GeneralizedPsdModel, factor: float) -> GeneralizedPsdModel:
    if factor <= 0:
        raise InvalidModelError(f"Scale factor must be positive, got {factor}")
    return replace(model, log_scales=model.log_scales + np.log(factor))


def g_filter_step(
    prior: GeneralizedPsdModel,
    q: GeneralizedPsdModel,
    g: GeneralizedPsdModel,
    y,
    step: int = 0,
    previous: str = "u",
    observation: str = "y",
) -> Tuple[GeneralizedPsdModel, float]:
    """Posterior of one Bayes step, order prior.order * q.order * g.order, and the evidence Z."""
    likelihood = g_partial_eval(g, observation, y)
    source = g_rename_groups(prior, {prior.groups[0][0]: previous})
    joint = g_product(g_product(source, q), likelihood)
    predicted = g_marginalize(joint, previous)
    try:
        return g_normalize(predicted)
    except DegenerateModelError:
        raise ZeroEvidenceError(step, np.asarray(y).tolist())


def g_mean(model: GeneralizedPsdModel) -> np.ndarray:
    """Mean of the normalized model over R^d."""
    terms, _ = _entry_masses(model)
    total = terms.sum()
    if not total > 0:
        raise DegenerateModelError("Cannot take the mean of a model with zero mass")
    return np.einsum("ij,ijd->d", terms, model.centers) / total


def g_covariance(model: GeneralizedPsdModel) -> np.ndarray:
    """Covariance of the normalized model over R^d; each entry has covariance (2 P_ij)^-1."""
    terms, _ = _entry_masses(model)
    total = terms.sum()
    mu = np.einsum("ij,ijd->d", terms, model.centers) / total
    entry_cov = np.linalg.inv(2 * model.precisions)
    second = entry_cov + np.einsum("ija,ijb->ijab", model.centers, model.centers)
    cov = np.einsum("ij,ijab->ab", terms, second) / total - np.outer(mu, mu)
    return (cov + cov.T) / 2


def embed_psd(model: GaussianPsdModel) -> GeneralizedPsdModel:
    """Exact generalized form of a diagonal-precision Gaussian PSD model."""
    x = model.anchors
    eta = model.precision
    M, d = x.shape
    delta = x[:, None, :] - x[None, :, :]
    precisions = np.broadcast_to(np.diag(2 * eta), (M, M, d, d))
    return GeneralizedPsdModel(
        weights=model.weights,
        log_scales=model.log_scale - 0.5 * (eta * delta ** 2).sum(axis=-1),
        precisions=precisions,
        centers=(x[:, None, :] + x[None, :, :]) / 2,
        groups=model.groups,
    )


def g_from_linear_square(alphas, centers, precisions, groups: Groups = ()) -> GeneralizedPsdModel:
    """(sum_j alpha_j exp(-(x - mu_j)^T P_j (x - mu_j)))^2 as a rank-one generalized model."""
    alphas = np.asarray(alphas, dtype=float).reshape(-1)
    centers = np.asarray(centers, dtype=float).reshape(len(alphas), -1)
    d = centers.shape[1]
    precisions = np.asarray(precisions, dtype=float).reshape(len(alphas), d, d)
    M = len(alphas)
    Pa = np.broadcast_to(precisions[:, None], (M, M, d, d))
    Pb = np.broadcast_to(precisions[None, :], (M, M, d, d))
    ma = np.broadcast_to(centers[:, None], (M, M, d))
    mb = np.broadcast_to(centers[None, :], (M, M, d))
    P, mu, log_constant, jittered = _combine(Pa, ma, Pb, mb, "linear square")
    return GeneralizedPsdModel(
        weights=np.outer(alphas, alphas),
        log_scales=(log_constant + log_constant.T) / 2,
        precisions=P,
        centers=mu,
        groups=groups,
        jittered=jittered,
    )


def g_from_gmm(weights, means, precision_matrices, groups: Groups = ()) -> GeneralizedPsdModel:
    """Full-covariance mixture sum_k w_k N(x; mu_k, Lambda_k^-1) with diagonal A = diag(w)."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(w < 0):
        raise InvalidModelError(f"Mixture weights must be nonnegative: {w}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InvalidModelError(f"Mixture weights must sum to 1, got {w.sum()}")
    M = len(w)
    mu = np.asarray(means, dtype=float).reshape(M, -1)
    d = mu.shape[1]
    lam = np.asarray(precision_matrices, dtype=float).reshape(M, d, d)
    try:
        logdet = _chol_logdet(np.linalg.cholesky(lam))
    except np.linalg.LinAlgError as e:
        raise InvalidModelError(f"Component precisions must be positive definite: {e}")
    log_norm = 0.5 * logdet - 0.5 * d * np.log(2 * np.pi)
    # square roots of each component, so diagonal entries reproduce the components exactly
    root = g_from_linear_square(np.ones(M), mu, lam / 4, groups)
    return GeneralizedPsdModel(
        weights=np.diag(w),
        log_scales=root.log_scales + 0.5 * (log_norm[:, None] + log_norm[None, :]),
        precisions=root.precisions,
        centers=root.centers,
        groups=groups,
    )


def kalman_lambda(p: ConditionalGaussianLinear, radius: float, epsilon: float) -> float:
    """Smallest-effort lambda with sup over ||(x, y)|| <= radius of |p - p_hat| <= epsilon."""
    if radius <= 0 or epsilon <= 0:
        raise InvalidModelError(f"radius and epsilon must be positive, got {radius}, {epsilon}")
    logdet = 2 * np.log(np.diag(cho_factor(p.cov, lower=True)[0])).sum()
    p_max = np.exp(-0.5 * p.dim_out * np.log(2 * np.pi) - 0.5 * logdet)
    lam = np.log1p(epsilon / p_max) / radius ** 2
    if not lam > 0 or not np.isfinite(lam):
        raise SingularPrecisionError(f"epsilon={epsilon} gives lambda={lam}, not representable")
    return float(lam)


def kalman_component(
    p: ConditionalGaussianLinear,
    radius: float,
    epsilon: float,
    lam: Optional[float] = None,
    groups: Tuple[str, str] = ("x", "y"),
) -> Tuple[GeneralizedPsdModel, float]:
    """Order-one model p_hat(x, y) = p(y | x) exp(-lambda ||(x, y)||^2).

    The extra confinement makes the precision positive definite so the
    result can be integrated and multiplied like any other entry.
    """
    lam = kalman_lambda(p, radius, epsilon) if lam is None else float(lam)
    if not lam > 0:
        raise SingularPrecisionError(f"lambda must be positive, got {lam}")
    d, d_out = p.dim_in, p.dim_out
    S = 2 * p.cov
    L = np.hstack([p.F, -np.eye(d_out)])
    S_factor = cho_factor(S)
    P = L.T @ cho_solve(S_factor, L)
    P_lam = P + lam * np.eye(d + d_out)
    beta = -L.T @ cho_solve(S_factor, p.b)
    center = cho_solve(cho_factor(P_lam), beta)
    logdet = 2 * np.log(np.diag(cho_factor(p.cov, lower=True)[0])).sum()
    log_c_sigma = -0.5 * d_out * np.log(2 * np.pi) - 0.5 * logdet
    woodbury = lam * p.b @ np.linalg.solve(lam * S + L @ L.T, p.b)
    model = GeneralizedPsdModel(
        weights=np.ones((1, 1)),
        log_scales=np.array([[log_c_sigma - woodbury]]),
        precisions=((P_lam + P_lam.T) / 2)[None, None],
        centers=center[None, None],
        groups=((groups[0], d), (groups[1], d_out)),
    )
    return model, lam


def compress(
    model: GeneralizedPsdModel,
    target_order: int,
    domain: Domain,
    seed: int,
    anchors: Optional[np.ndarray] = None,
    precision: Optional[np.ndarray] = None,
    n: Optional[int] = None,
    reg: float = 1e-10,
) -> GaussianPsdModel:
    """Refit the normalized model as a rank-one Gaussian PSD model of order target_order.

    The square root of the density is learned by kernel ridge regression on
    uniformly drawn points; the result is normalized over the domain.
    """
    from lib.learning import LearnConfig, learn_rank_one

    normalized, _ = g_normalize(model)
    if precision is None:
        index = np.arange(model.order)
        diagonal_blocks = model.precisions[index, index]
        precision = np.einsum("mcc->mc", diagonal_blocks).min(axis=0) / 2
    cfg = LearnConfig(
        n=n or max(8 * target_order, 200),
        M=target_order,
        precision=np.broadcast_to(np.asarray(precision, dtype=float), (model.dim,)).copy(),
        reg=reg,
        domain=domain,
        seed=seed,
        groups=model.groups,
    )
    learned = learn_rank_one(lambda pts: g_evaluate(normalized, pts), cfg, anchors=anchors)
    return normalize(learned, domain)[0]
