"""Total variation, Hilbert projective metric, Birkhoff bound and sup-norm error."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np

from lib.errors import DegenerateModelError, InvalidModelError
from lib.generalized_psd import GeneralizedPsdModel, g_evaluate
from lib.grid import GridDensity, tensor_points
from lib.psd_core import Domain, GaussianPsdModel, evaluate

logger = logging.getLogger(__name__)

TV_HILBERT_CONSTANT = 2 / math.log(3)
ENVELOPE_MARGIN = 1.5
MAX_REJECTION_ROUNDS = 1000

Density = Union[GaussianPsdModel, GeneralizedPsdModel, GridDensity, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class Quadrature:
    domain: Domain
    scheme: str = "grid"
    resolution: int = 256
    samples: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("grid", "monte_carlo"):
            raise InvalidModelError(f"Unknown quadrature scheme {self.scheme!r}")
        if not self.domain.is_bounded:
            raise InvalidModelError("Quadrature needs a bounded domain")
        if self.scheme == "grid" and self.domain.dim > 2:
            raise InvalidModelError("Tensor-grid quadrature is limited to d <= 2; use monte_carlo")
        if self.scheme == "monte_carlo" and self.samples < 1000:
            raise InvalidModelError(f"Monte Carlo needs at least 1000 samples, got {self.samples}")


def as_density(p: Density) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized (n, d) -> (n,) evaluator for any supported density representation."""
    if isinstance(p, GaussianPsdModel):
        return lambda x: evaluate(p, np.asarray(x).reshape(-1, p.dim))
    if isinstance(p, GeneralizedPsdModel):
        return lambda x: g_evaluate(p, np.asarray(x).reshape(-1, p.dim))
    if callable(p):
        return lambda x: np.asarray(p(x), dtype=float).reshape(-1)
    raise InvalidModelError(f"Cannot evaluate {type(p).__name__} as a density")


def _grid_values(p: Density, quad: Quadrature) -> np.ndarray:
    if isinstance(p, GridDensity) and p.resolution == quad.resolution and p.domain == quad.domain:
        return p.values
    return as_density(p)(tensor_points(quad.domain, quad.resolution))


def monte_carlo_tv(p: Density, q: Density, quad: Quadrature) -> Tuple[float, float]:
    """TV estimate with points drawn from (p + q) / 2 by rejection, and its standard error.

    p and q are expected to be normalized on the domain.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(quad.seed)))
    fp, fq = as_density(p), as_density(q)
    lo, hi = quad.domain.limits(quad.domain.dim)

    def mixture(x):
        return 0.5 * (fp(x) + fq(x))

    pilot = rng.uniform(lo, hi, size=(quad.samples, len(lo)))
    bound = ENVELOPE_MARGIN * mixture(pilot).max()
    if not bound > 0:
        raise DegenerateModelError("Both densities vanish on the pilot sample")
    accepted = []
    count = 0
    for _ in range(MAX_REJECTION_ROUNDS):
        x = rng.uniform(lo, hi, size=(quad.samples, len(lo)))
        values = mixture(x)
        peak = float(values.max())
        if peak > bound:
            # draws accepted under the old envelope are discarded
            logger.warning("Rejection envelope %.4g exceeded by %.4g; restarting with a raised envelope", bound, peak)
            bound = ENVELOPE_MARGIN * peak
            accepted, count = [], 0
            continue
        keep = rng.uniform(0, bound, size=len(x)) < values
        accepted.append(x[keep])
        count += int(keep.sum())
        if count >= quad.samples:
            break
    if not accepted:
        raise DegenerateModelError("Rejection sampling accepted no points")
    points = np.concatenate(accepted)[:quad.samples]
    ratio = np.abs(fp(points) - fq(points)) / mixture(points)
    return float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(len(ratio)))


def tv_distance(p: Density, q: Density, quad: Quadrature) -> float:
    """Integral of |p - q| over the domain."""
    if quad.scheme == "monte_carlo":
        return monte_carlo_tv(p, q, quad)[0]
    vp, vq = _grid_values(p, quad), _grid_values(q, quad)
    cell = quad.domain.volume() / quad.resolution ** quad.domain.dim
    return float(np.abs(vp - vq).sum() * cell)


def hilbert_metric(p: Union[Density, np.ndarray], q: Union[Density, np.ndarray], grid: Optional[np.ndarray] = None) -> float:
    """log(max p/q * max q/p) over grid points; +inf unless both are positive everywhere."""
    vp = np.asarray(p, dtype=float).reshape(-1) if grid is None else as_density(p)(grid)
    vq = np.asarray(q, dtype=float).reshape(-1) if grid is None else as_density(q)(grid)
    if np.any(vp <= 0) or np.any(vq <= 0):
        return math.inf
    log_ratio = np.log(vp) - np.log(vq)
    return float(log_ratio.max() - log_ratio.min())


def birkhoff_bound(sigma: float) -> float:
    """Upper bound (1 - sigma^2) / (1 + sigma^2) on the contraction of a sigma-mixing kernel."""
    if not 0 < sigma <= 1:
        raise InvalidModelError(f"sigma must lie in (0, 1], got {sigma}")
    return (1 - sigma ** 2) / (1 + sigma ** 2)


def sup_error(f: Density, g: Density, grid: np.ndarray) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidModelError("Grid must be nonempty")
    grid = grid.reshape(len(grid), -1)
    return float(np.max(np.abs(as_density(f)(grid) - as_density(g)(grid))))
