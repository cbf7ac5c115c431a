"""Gaussian PSD Models with diagonal precision and their closed-form algebra.

A model of order M over R^d is

    f(x) = exp(log_scale) * Phi(x)^T A Phi(x),   Phi(x)_i = exp(-sum_c eta_c (x_c - a_ic)^2)

with anchors a_i, a shared precision vector eta and a PSD weight matrix A.
Coordinates are split into named variable groups so joint models such as
Q(u, x) can be partially evaluated, multiplied and marginalized by name.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf, erfc

from lib.errors import DegenerateModelError, DimensionError, InvalidModelError

logger = logging.getLogger(__name__)

Groups = Tuple[Tuple[str, int], ...]

PSD_TOL = 1e-10
SYM_TOL = 1e-12
PRUNE_TOL = 1e-14

# Upper bound on n * M * d elements held at once by pointwise evaluation.
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class Domain:
    """Integration domain: all of R^d or a hypercube given by per-dimension bounds."""
    kind: str = "hypercube"
    bounds: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.kind not in ("all", "hypercube"):
            raise InvalidModelError(f"Unknown domain kind: {self.kind}")
        if self.kind == "hypercube":
            if not self.bounds:
                raise InvalidModelError("Hypercube domain requires bounds")
            bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
            for lo, hi in bounds:
                if not lo < hi:
                    raise InvalidModelError(f"Invalid bounds ({lo}, {hi})")
            object.__setattr__(self, "bounds", bounds)

    @classmethod
    def whole_space(cls) -> "Domain":
        return cls(kind="all")

    @classmethod
    def hypercube(cls, dim: int, lo: float = -1.0, hi: float = 1.0) -> "Domain":
        return cls(kind="hypercube", bounds=tuple((lo, hi) for _ in range(dim)))

    @classmethod
    def box(cls, bounds: Sequence[Tuple[float, float]]) -> "Domain":
        return cls(kind="hypercube", bounds=tuple(bounds))

    @property
    def is_bounded(self) -> bool:
        return self.kind == "hypercube"

    @property
    def dim(self) -> Optional[int]:
        return len(self.bounds) if self.is_bounded else None

    def limits(self, dim: int) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper limits for a dim-dimensional integral."""
        if not self.is_bounded:
            return np.full(dim, -np.inf), np.full(dim, np.inf)
        if len(self.bounds) != dim:
            raise DimensionError(f"Domain has {len(self.bounds)} dimensions, expected {dim}")
        arr = np.array(self.bounds, dtype=float)
        return arr[:, 0], arr[:, 1]

    def product(self, other: "Domain") -> "Domain":
        """Cartesian product of two hypercubes."""
        if not (self.is_bounded and other.is_bounded):
            if self.is_bounded or other.is_bounded:
                raise InvalidModelError("Cannot mix bounded and unbounded domains")
            return Domain.whole_space()
        return Domain.box(self.bounds + other.bounds)

    def volume(self) -> float:
        if not self.is_bounded:
            return np.inf
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    def center(self) -> np.ndarray:
        if not self.is_bounded:
            raise InvalidModelError("Unbounded domain has no center")
        return np.array([(lo + hi) / 2 for lo, hi in self.bounds])


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _normalize_groups(groups, dim: int) -> Groups:
    if not groups:
        return (("x", dim),)
    normalized = tuple((str(name), int(size)) for name, size in groups)
    names = [name for name, _ in normalized]
    if len(set(names)) != len(names):
        raise InvalidModelError(f"Duplicate group names: {names}")
    if any(size <= 0 for _, size in normalized):
        raise InvalidModelError(f"Group dimensions must be positive: {normalized}")
    if sum(size for _, size in normalized) != dim:
        raise InvalidModelError(f"Group dimensions {normalized} do not sum to {dim}")
    return normalized


def group_columns(groups: Groups, name: str) -> np.ndarray:
    """Column indices of a named group."""
    start = 0
    for group, size in groups:
        if group == name:
            return np.arange(start, start + size)
        start += size
    raise DimensionError(f"Unknown group '{name}' (groups: {[g for g, _ in groups]})")


def check_psd(weights: np.ndarray, what: str = "weights") -> None:
    """Raise InvalidModelError unless weights are symmetric PSD to tolerance."""
    scale = max(1.0, float(np.abs(weights).max(initial=0.0)))
    if np.abs(weights - weights.T).max(initial=0.0) > SYM_TOL * scale:
        raise InvalidModelError(f"{what} matrix is not symmetric")
    if weights.size == 0:
        return
    eigenvalues = np.linalg.eigvalsh(weights)
    trace = float(np.trace(weights))
    reference = trace if trace > 0 else float(np.abs(weights).max(initial=0.0))
    if eigenvalues.min() < -PSD_TOL * reference:
        raise InvalidModelError(
            f"{what} matrix is not PSD (min eigenvalue {eigenvalues.min():.3e}, trace {trace:.3e})"
        )


def project_psd(weights: np.ndarray) -> np.ndarray:
    """Symmetrize and clip eigenvalues below -PSD_TOL * trace to zero."""
    weights = (weights + weights.T) / 2
    if weights.size == 0:
        return weights
    eigenvalues = np.linalg.eigvalsh(weights)
    trace = float(np.trace(weights))
    if eigenvalues.min() >= -PSD_TOL * max(trace, 0.0):
        return weights
    logger.debug("Clipping negative eigenvalue %.3e (trace %.3e)", eigenvalues.min(), trace)
    eigenvalues, vectors = np.linalg.eigh(weights)
    eigenvalues = np.where(eigenvalues < -PSD_TOL * max(trace, 0.0), 0.0, eigenvalues)
    clipped = (vectors * eigenvalues) @ vectors.T
    return (clipped + clipped.T) / 2


@dataclass(frozen=True, eq=False)
class GaussianPsdModel:
    anchors: np.ndarray
    precision: np.ndarray
    weights: np.ndarray
    groups: Groups = ()
    log_scale: float = 0.0

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float)
        if anchors.ndim == 1:
            anchors = anchors.reshape(-1, 1)
        if anchors.ndim != 2 or anchors.shape[0] == 0:
            raise InvalidModelError(f"Anchors must be a non-empty M x d matrix, got shape {anchors.shape}")
        order, dim = anchors.shape
        precision = np.array(self.precision, dtype=float).reshape(-1)
        if precision.size == 1 and dim > 1:
            precision = np.full(dim, precision[0])
        if precision.shape != (dim,):
            raise InvalidModelError(f"Precision must have {dim} entries, got {precision.shape}")
        if not np.all(precision > 0) or not np.all(np.isfinite(precision)):
            raise InvalidModelError(f"Precision must be strictly positive: {precision}")
        weights = np.array(self.weights, dtype=float)
        if weights.shape != (order, order):
            raise InvalidModelError(f"Weights must be {order} x {order}, got {weights.shape}")
        if not np.all(np.isfinite(weights)) or not np.all(np.isfinite(anchors)):
            raise InvalidModelError("Anchors and weights must be finite")
        check_psd(weights)
        log_scale = float(self.log_scale)
        if np.isnan(log_scale) or log_scale == np.inf:
            raise InvalidModelError(f"Invalid log scale {log_scale}")
        object.__setattr__(self, "anchors", _frozen(anchors))
        object.__setattr__(self, "precision", _frozen(precision))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "groups", _normalize_groups(self.groups, dim))
        object.__setattr__(self, "log_scale", log_scale)

    @property
    def order(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def group_names(self) -> List[str]:
        return [name for name, _ in self.groups]

    def group_dim(self, name: str) -> int:
        return len(group_columns(self.groups, name))


def as_points(x, dim: int) -> Tuple[np.ndarray, bool]:
    """Coerce x to an (n, dim) array; the flag says whether x was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise DimensionError(f"Scalar point given for a {dim}-dimensional model")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if arr.size == dim:
            return arr.reshape(1, dim), True
        if dim == 1:
            return arr.reshape(-1, 1), False
        raise DimensionError(f"Point has {arr.size} coordinates, expected {dim}")
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr, False
    raise DimensionError(f"Points have shape {arr.shape}, expected (n, {dim})")


def log_features(anchors: np.ndarray, precision: np.ndarray, points: np.ndarray) -> np.ndarray:
    """log Phi(x) for each point, shape (n, M)."""
    n, d = points.shape
    order = anchors.shape[0]
    rows = max(1, _CHUNK_ELEMENTS // max(1, order * d))
    out = np.empty((n, order))
    for start in range(0, n, rows):
        diff = points[start:start + rows, None, :] - anchors[None, :, :]
        out[start:start + rows] = -np.einsum("nmd,d->nm", diff ** 2, precision)
    return out


def feature_map(model: GaussianPsdModel, x) -> np.ndarray:
    points, _ = as_points(x, model.dim)
    return np.exp(log_features(model.anchors, model.precision, points))


def _clamp(values: np.ndarray, magnitudes: np.ndarray) -> np.ndarray:
    tolerance = PSD_TOL * np.maximum(1.0, magnitudes)
    if np.any(values < -tolerance):
        worst = values.min()
        raise InvalidModelError(f"Model evaluates to {worst:.3e} < 0 beyond rounding")
    return np.maximum(values, 0.0)


def evaluate(model: GaussianPsdModel, x) -> Union[float, np.ndarray]:
    """f(x) at a point (returns float) or at an (n, d) array of points."""
    points, single = as_points(x, model.dim)
    logphi = log_features(model.anchors, model.precision, points)
    shift = logphi.max(axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    phi = np.exp(logphi - shift)
    quad = np.einsum("ni,ij,nj->n", phi, model.weights, phi)
    magnitude = np.einsum("ni,ij,nj->n", phi, np.abs(model.weights), phi)
    with np.errstate(over="ignore"):
        factor = np.exp(model.log_scale + 2 * shift[:, 0])
    values = _clamp(factor * quad, factor * magnitude)
    return float(values[0]) if single else values


def log_gauss_segment(a, m, lo, hi) -> np.ndarray:
    """log of the integral of exp(-a (t - m)^2) over (lo, hi), elementwise."""
    a, m, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, m, lo, hi)))
    s = np.sqrt(a)
    z1 = s * (lo - m)
    z2 = s * (hi - m)
    with np.errstate(invalid="ignore"):
        diff = np.where(
            z1 > 0,
            erfc(z1) - erfc(z2),
            np.where(z2 < 0, erfc(-z2) - erfc(-z1), erf(z2) - erf(z1)),
        )
    with np.errstate(divide="ignore"):
        return 0.5 * np.log(np.pi / a) - np.log(2.0) + np.log(np.maximum(diff, 0.0))


def gauss_segment_first_moment(a, m, lo, hi) -> np.ndarray:
    """Mean of t under exp(-a (t - m)^2) restricted to (lo, hi)."""
    log_mass = log_gauss_segment(a, m, lo, hi)
    with np.errstate(over="ignore", invalid="ignore"):
        edge = np.exp(-a * (lo - m) ** 2) - np.exp(-a * (hi - m) ** 2)
        correction = edge / (2 * a) * np.exp(-log_mass)
    return m + np.where(np.isfinite(correction), correction, 0.0)


def _pair_log_overlap(model: GaussianPsdModel, columns: np.ndarray, domain: Domain) -> np.ndarray:
    """log of int prod_{c in columns} k(t, a_ic) k(t, a_jc) dt over the domain, shape (M, M)."""
    lo, hi = domain.limits(len(columns))
    eta = model.precision[columns]
    x = model.anchors[:, columns]
    delta = x[:, None, :] - x[None, :, :]
    middle = (x[:, None, :] + x[None, :, :]) / 2
    per_coordinate = -eta / 2 * delta ** 2 + log_gauss_segment(2 * eta, middle, lo, hi)
    return per_coordinate.sum(axis=-1)


def _shifted(log_values: np.ndarray) -> Tuple[np.ndarray, float]:
    finite = log_values[np.isfinite(log_values)]
    shift = float(finite.max()) if finite.size else 0.0
    return np.exp(log_values - shift), shift


def _log_mass(model: GaussianPsdModel, domain: Domain) -> Tuple[float, float]:
    """(signed sum, log factor) with mass = sum * exp(log factor)."""
    overlap, shift = _shifted(_pair_log_overlap(model, np.arange(model.dim), domain))
    total = float(np.sum(model.weights * overlap))
    magnitude = float(np.sum(np.abs(model.weights) * overlap))
    if total < 0 and total >= -PSD_TOL * max(magnitude, 1e-300):
        total = 0.0
    return total, model.log_scale + shift


def integral(model: GaussianPsdModel, domain: Domain) -> float:
    """Exact integral over the domain (closed form, O(M^2 d))."""
    total, log_factor = _log_mass(model, domain)
    if total < 0:
        raise InvalidModelError(f"Negative integral {total:.3e}")
    if total == 0:
        return 0.0
    return float(np.exp(np.log(total) + log_factor))


def mean(model: GaussianPsdModel, domain: Domain) -> np.ndarray:
    """First moment of the normalized model over the domain."""
    columns = np.arange(model.dim)
    overlap, _ = _shifted(_pair_log_overlap(model, columns, domain))
    mass_terms = model.weights * overlap
    total = mass_terms.sum()
    if total <= 0:
        raise DegenerateModelError("Cannot take the mean of a model with zero mass")
    lo, hi = domain.limits(model.dim)
    x = model.anchors
    middle = (x[:, None, :] + x[None, :, :]) / 2
    moments = gauss_segment_first_moment(2 * model.precision, middle, lo, hi)
    return np.einsum("ij,ijc->c", mass_terms, moments) / total


def rename_groups(model: GaussianPsdModel, mapping: Dict[str, str]) -> GaussianPsdModel:
    groups = tuple((mapping.get(name, name), size) for name, size in model.groups)
    return replace(model, groups=groups)


def scale(model: GaussianPsdModel, factor: float) -> GaussianPsdModel:
    if factor <= 0:
        raise InvalidModelError(f"Scale factor must be positive, got {factor}")
    return replace(model, log_scale=model.log_scale + float(np.log(factor)))


def partial_eval(model: GaussianPsdModel, group: str, value) -> GaussianPsdModel:
    """h(x) = f(x, y0) as a model on the remaining groups."""
    columns = group_columns(model.groups, group)
    if len(columns) == model.dim:
        raise DimensionError("Cannot partially evaluate every group; use evaluate")
    y0 = np.asarray(value, dtype=float).reshape(-1)
    if y0.size != len(columns):
        raise DimensionError(f"Value has {y0.size} coordinates, group '{group}' has {len(columns)}")
    keep = np.setdiff1d(np.arange(model.dim), columns)
    logd = -((y0[None, :] - model.anchors[:, columns]) ** 2 * model.precision[columns]).sum(axis=1)
    factors, shift = _shifted(logd)
    weights = model.weights * np.outer(factors, factors)
    return GaussianPsdModel(
        anchors=model.anchors[:, keep],
        precision=model.precision[keep],
        weights=(weights + weights.T) / 2,
        groups=tuple(g for g in model.groups if g[0] != group),
        log_scale=model.log_scale + 2 * shift,
    )


def _lift(model: GaussianPsdModel, groups: Groups) -> Tuple[np.ndarray, np.ndarray]:
    """Anchors and precision embedded in the union coordinates (zeros elsewhere)."""
    dim = sum(size for _, size in groups)
    anchors = np.zeros((model.order, dim))
    precision = np.zeros(dim)
    for name, _ in model.groups:
        target = group_columns(groups, name)
        source = group_columns(model.groups, name)
        anchors[:, target] = model.anchors[:, source]
        precision[target] = model.precision[source]
    return anchors, precision


def union_groups(first: Groups, second: Groups) -> Groups:
    sizes = dict(first)
    merged = list(first)
    for name, size in second:
        if name in sizes:
            if sizes[name] != size:
                raise DimensionError(f"Group '{name}' has dimension {sizes[name]} and {size}")
        else:
            merged.append((name, size))
    return tuple(merged)


def product(f: GaussianPsdModel, g: GaussianPsdModel) -> GaussianPsdModel:
    """Pointwise product; order M1 * M2, precisions add on shared coordinates."""
    groups = union_groups(f.groups, g.groups)
    xf, eta_f = _lift(f, groups)
    xg, eta_g = _lift(g, groups)
    eta = eta_f + eta_g
    centers = (eta_f * xf[:, None, :] + eta_g * xg[None, :, :]) / eta
    reduced = eta_f * eta_g / eta
    logc = -(reduced * (xf[:, None, :] - xg[None, :, :]) ** 2).sum(axis=-1)
    factors, shift = _shifted(logc.reshape(-1))
    weights = np.kron(f.weights, g.weights) * np.outer(factors, factors)
    return GaussianPsdModel(
        anchors=centers.reshape(-1, len(eta)),
        precision=eta,
        weights=(weights + weights.T) / 2,
        groups=groups,
        log_scale=f.log_scale + g.log_scale + 2 * shift,
    )


def compact(model: GaussianPsdModel, tol: float = PRUNE_TOL) -> GaussianPsdModel:
    """Drop anchors whose weight row is negligible relative to the largest weight."""
    reference = np.abs(model.weights).max(initial=0.0)
    if reference == 0:
        return model
    keep = np.abs(model.weights).max(axis=1) > tol * reference
    if keep.all():
        return model
    return replace(
        model,
        anchors=model.anchors[keep],
        weights=model.weights[np.ix_(keep, keep)],
    )


def marginalize(model: GaussianPsdModel, group: str, domain: Domain) -> GaussianPsdModel:
    """h(x) = int f(x, y) dy over the group's domain; order unchanged."""
    columns = group_columns(model.groups, group)
    if len(columns) == model.dim:
        raise DimensionError("Cannot marginalize every group; use integral")
    keep = np.setdiff1d(np.arange(model.dim), columns)
    overlap, shift = _shifted(_pair_log_overlap(model, columns, domain))
    weights = model.weights * overlap
    weights = project_psd(weights) if domain.is_bounded else (weights + weights.T) / 2
    return GaussianPsdModel(
        anchors=model.anchors[:, keep],
        precision=model.precision[keep],
        weights=weights,
        groups=tuple(g for g in model.groups if g[0] != group),
        log_scale=model.log_scale + shift,
    )


def markov_step(
    Q: GaussianPsdModel, f: GaussianPsdModel, domain: Domain, over: Optional[str] = None
) -> GaussianPsdModel:
    """g(x) = int Q(u, x) f(u) du, returned with the order of Q.

    Fuses product and marginalization: the integral over u only rescales
    A_Q entrywise by the Gram matrix c_ij = int f(u) phi_i(u) phi_j(u) du.
    """
    over = over or Q.groups[0][0]
    columns = group_columns(Q.groups, over)
    if f.dim != len(columns):
        raise DimensionError(f"f has dimension {f.dim}, group '{over}' has {len(columns)}")
    if len(columns) == Q.dim:
        raise DimensionError("Q must have a group besides the integrated one")
    keep = np.setdiff1d(np.arange(Q.dim), columns)
    lo, hi = domain.limits(len(columns))

    eta = Q.precision[columns]
    theta = f.precision
    u = Q.anchors[:, columns]
    z = f.anchors
    # pair (i, j) of Q collapses to 2 eta (t - p_ij)^2, pair (k, l) of f to 2 theta (t - q_kl)^2
    p = (u[:, None, :] + u[None, :, :]) / 2
    du = -eta / 2 * (u[:, None, :] - u[None, :, :]) ** 2
    q = (z[:, None, :] + z[None, :, :]) / 2
    dz = -theta / 2 * (z[:, None, :] - z[None, :, :]) ** 2
    a, b = 2 * eta, 2 * theta
    total = a + b
    reduced = a * b / total

    log_gram = np.empty((Q.order, Q.order))
    sums = np.empty((Q.order, Q.order))
    for i in range(Q.order):
        # shape (M_Q, M_f, M_f, d)
        pi = p[i][:, None, None, :]
        centers = (a * pi + b * q[None]) / total
        terms = (
            du[i][:, None, None, :]
            + dz[None]
            - reduced * (pi - q[None]) ** 2
            + log_gauss_segment(total, centers, lo, hi)
        ).sum(axis=-1)
        row_shift = terms.reshape(Q.order, -1).max(axis=1)
        row_shift = np.where(np.isfinite(row_shift), row_shift, 0.0)
        sums[i] = np.einsum("kl,jkl->j", f.weights, np.exp(terms - row_shift[:, None, None]))
        log_gram[i] = row_shift
    sums = np.maximum(sums, 0.0)
    shift = float(log_gram.max())
    gram = sums * np.exp(log_gram - shift)
    gram = (gram + gram.T) / 2
    weights = project_psd(Q.weights * gram)
    return GaussianPsdModel(
        anchors=Q.anchors[:, keep],
        precision=Q.precision[keep],
        weights=weights,
        groups=tuple(g for g in Q.groups if g[0] != over),
        log_scale=Q.log_scale + f.log_scale + shift,
    )


def normalize(model: GaussianPsdModel, domain: Domain) -> Tuple[GaussianPsdModel, float]:
    """Model rescaled to unit mass on the domain, and the original mass Z."""
    total, log_factor = _log_mass(model, domain)
    if not total > 0 or not np.isfinite(total):
        raise DegenerateModelError(f"Model has non-positive mass {total:.3e} on the domain")
    log_mass = np.log(total) + log_factor
    return replace(model, log_scale=model.log_scale - log_mass), float(np.exp(log_mass))


def log_normalizer(model: GaussianPsdModel, domain: Domain) -> float:
    total, log_factor = _log_mass(model, domain)
    if not total > 0:
        raise DegenerateModelError(f"Model has non-positive mass {total:.3e} on the domain")
    return float(np.log(total) + log_factor)


def from_gmm(weights, means, precision, groups: Groups = ()) -> GaussianPsdModel:
    """Mixture sum_k w_k prod_c sqrt(eta_c / pi) exp(-eta_c (x_c - mu_kc)^2) as a diagonal-A model."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(w < 0):
        raise InvalidModelError(f"Mixture weights must be nonnegative: {w}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InvalidModelError(f"Mixture weights must sum to 1, got {w.sum()}")
    mu = np.array(means, dtype=float)
    if mu.ndim == 1:
        mu = mu.reshape(len(w), -1)
    eta = np.array(precision, dtype=float).reshape(-1)
    if eta.size == 1:
        eta = np.full(mu.shape[1], eta[0])
    normalizer = np.prod(np.sqrt(eta / np.pi))
    return GaussianPsdModel(anchors=mu, precision=eta / 2, weights=np.diag(w * normalizer), groups=groups)


def from_linear_square(w, anchors, precision, groups: Groups = ()) -> GaussianPsdModel:
    """(w^T Phi(x))^2 as a rank-one model A = w w^T."""
    w = np.asarray(w, dtype=float).reshape(-1)
    return GaussianPsdModel(anchors=anchors, precision=precision, weights=np.outer(w, w), groups=groups)


def flat_model(domain: Domain, precision: float = 1e-8, groups: Groups = ()) -> GaussianPsdModel:
    """A nearly constant normalized model on a bounded domain (the uniform initial law)."""
    center = domain.center()
    model = GaussianPsdModel(
        anchors=center.reshape(1, -1),
        precision=np.full(center.size, precision),
        weights=np.ones((1, 1)),
        groups=groups,
    )
    return normalize(model, domain)[0]
