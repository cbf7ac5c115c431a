"""Dense midpoint tensor grids over a bounded domain; the brute-force oracle representation."""
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from lib.errors import DegenerateModelError, GridTooLargeError, InvalidModelError
from lib.psd_core import Domain

DEFAULT_MAX_CELLS = 1 << 22


def tensor_axes(domain: Domain, resolution: int) -> Tuple[np.ndarray, ...]:
    """Cell midpoints per dimension."""
    if not domain.is_bounded:
        raise InvalidModelError("Grids need a bounded domain")
    if resolution < 1:
        raise InvalidModelError(f"Grid resolution must be positive, got {resolution}")
    return tuple(
        lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution for lo, hi in domain.bounds
    )


def tensor_points(domain: Domain, resolution: int, max_cells: int = DEFAULT_MAX_CELLS) -> np.ndarray:
    """All cell midpoints as an (resolution^d, d) array, first axis slowest."""
    dim = domain.dim
    if resolution ** dim > max_cells:
        raise GridTooLargeError(f"{resolution}^{dim} cells exceeds the cap of {max_cells}")
    axes = tensor_axes(domain, resolution)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


@dataclass(frozen=True, eq=False)
class GridDensity:
    domain: Domain
    resolution: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.resolution ** self.domain.dim:
            raise InvalidModelError(
                f"Grid of resolution {self.resolution} in {self.domain.dim}d needs "
                f"{self.resolution ** self.domain.dim} values, got {values.size}"
            )
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InvalidModelError("Grid density values must be finite and nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(
        cls,
        func: Callable[[np.ndarray], np.ndarray],
        domain: Domain,
        resolution: int,
        max_cells: int = DEFAULT_MAX_CELLS,
    ) -> "GridDensity":
        points = tensor_points(domain, resolution, max_cells)
        return cls(domain, resolution, np.asarray(func(points), dtype=float))

    @classmethod
    def uniform(cls, domain: Domain, resolution: int) -> "GridDensity":
        cells = resolution ** domain.dim
        return cls(domain, resolution, np.full(cells, 1.0 / domain.volume()))

    @classmethod
    def from_samples(
        cls,
        samples: np.ndarray,
        weights: Optional[np.ndarray],
        domain: Domain,
        resolution: int,
    ) -> "GridDensity":
        """Histogram density of weighted samples; samples outside the domain are dropped."""
        samples = np.asarray(samples, dtype=float).reshape(len(samples), -1)
        weights = np.full(len(samples), 1.0 / len(samples)) if weights is None else np.asarray(weights)
        lo = np.array([b[0] for b in domain.bounds])
        hi = np.array([b[1] for b in domain.bounds])
        idx = np.floor((samples - lo) / (hi - lo) * resolution).astype(int)
        inside = np.all((idx >= 0) & (idx < resolution), axis=1)
        flat = np.ravel_multi_index(tuple(idx[inside].T), (resolution,) * domain.dim)
        counts = np.bincount(flat, weights=weights[inside], minlength=resolution ** domain.dim)
        cell_volume = domain.volume() / resolution ** domain.dim
        return cls(domain, resolution, counts / cell_volume)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def cell_volume(self) -> float:
        return self.domain.volume() / self.resolution ** self.dim

    @property
    def points(self) -> np.ndarray:
        return tensor_points(self.domain, self.resolution, max_cells=self.values.size)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.resolution,) * self.dim

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def normalized(self) -> "GridDensity":
        mass = self.mass()
        if not mass > 0:
            raise DegenerateModelError("Grid density has zero mass")
        return replace(self, values=self.values / mass)

    def mean(self) -> np.ndarray:
        weights = self.values / self.values.sum()
        return weights @ self.points

    def covariance(self) -> np.ndarray:
        weights = self.values / self.values.sum()
        centered = self.points - weights @ self.points
        return (centered * weights[:, None]).T @ centered

    def __call__(self, x) -> np.ndarray:
        """Piecewise-constant evaluation at (n, d) points; zero outside the domain."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        lo = np.array([b[0] for b in self.domain.bounds])
        hi = np.array([b[1] for b in self.domain.bounds])
        idx = np.floor((x - lo) / (hi - lo) * self.resolution).astype(int)
        inside = np.all((idx >= 0) & (idx < self.resolution), axis=1)
        out = np.zeros(len(x))
        out[inside] = self.values[np.ravel_multi_index(tuple(idx[inside].T), self.shape)]
        return out
