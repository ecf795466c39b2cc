"""Cell-centred tensor grids on chart parameter boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ImmersionChart

MIN_CELLS = 8


def default_resolution(n: int) -> int:
    if n <= 2:
        return 128
    if n == 3:
        return 32
    return 16


@dataclass(frozen=True)
class GridSpec:
    """Cells per parameter coordinate over ``bounds``; points sit at cell centres."""

    shape: tuple
    bounds: np.ndarray
    periodic: tuple

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if any(s < 1 for s in self.shape):
            raise ValueError(f"grid shape must be positive, got {self.shape}")

    @classmethod
    def for_chart(cls, chart: ImmersionChart, N: int | None = None) -> "GridSpec":
        """N cells along the longest coordinate, proportionally fewer elsewhere (at least 8)."""
        N = default_resolution(chart.n) if N is None else int(N)
        ext = chart.bounds[:, 1] - chart.bounds[:, 0]
        counts = [max(MIN_CELLS, int(round(N * e / ext.max()))) for e in ext]
        return cls(tuple(counts), chart.bounds, tuple(chart.periodic))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return (self.bounds[:, 1] - self.bounds[:, 0]) / np.asarray(self.shape)

    def axes(self) -> list:
        h = self.spacing
        return [self.bounds[d, 0] + (np.arange(s) + 0.5) * h[d] for d, s in enumerate(self.shape)]

    def points(self) -> np.ndarray:
        """Cell centres, shape (size, ndim), C order over ``shape``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(tuple(s * factor for s in self.shape), self.bounds, self.periodic)

    def describe(self) -> dict:
        return {"shape": list(self.shape), "periodic": list(self.periodic),
                "bounds": self.bounds.tolist()}


def volume_density(chart: ImmersionChart, U) -> np.ndarray:
    """sqrt(det g) at parameter points."""
    g = chart.induced_metric(np.asarray(U, dtype=float))
    return np.sqrt(np.clip(np.linalg.det(g), 0.0, None))


def quadrature_weights(chart: ImmersionChart, grid: GridSpec) -> np.ndarray:
    """Midpoint-rule Riemannian volume weights sqrt(g) * cell volume."""
    return volume_density(chart, grid.points()) * float(np.prod(grid.spacing))


def local_refinement(grid: GridSpec, center, factor: int = 4) -> np.ndarray:
    """A 3^n stencil of points at spacing h/factor around ``center``, clipped to the box."""
    center = np.asarray(center, dtype=float)
    h = grid.spacing / factor
    offsets = np.stack(np.meshgrid(*[np.array([-1.0, 0.0, 1.0])] * grid.ndim, indexing="ij"), -1).reshape(-1, grid.ndim)
    P = center + offsets * h
    lo, hi = grid.bounds[:, 0], grid.bounds[:, 1]
    for d in range(grid.ndim):
        if grid.periodic[d]:
            P[:, d] = lo[d] + np.mod(P[:, d] - lo[d], hi[d] - lo[d])
        else:
            P[:, d] = np.clip(P[:, d], lo[d] + 0.5 * h[d], hi[d] - 0.5 * h[d])
    return P
