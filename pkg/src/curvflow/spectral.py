"""Laplace-Beltrami and Schroedinger operators on chart grids.

The discretization is a finite-volume form of
Delta f = -(1/sqrt g) d_a (sqrt g g^{ab} d_b f) on cell centres. Diagonal
metric terms use compact face differences with coefficients evaluated on the
faces; off-diagonal terms use centred differences at cell centres. The
stiffness matrix is symmetric, the mass matrix is diagonal (sqrt g times the
cell volume), and constants lie in the kernel exactly. Faces on a chart
boundary where sqrt g vanishes (sphere poles) carry no flux, so no special
pole closure is needed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from .flow import _Geo
from .geometry import ImmersionChart
from .grid import MIN_CELLS, GridSpec, volume_density


class GridTooCoarseError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteOperator:
    grid: GridSpec
    stiffness: sp.csr_matrix
    mass: np.ndarray

    @property
    def size(self) -> int:
        return self.grid.size

    def laplacian_apply(self, f) -> np.ndarray:
        """Delta f at the cell centres."""
        return (self.stiffness @ np.asarray(f, dtype=float)) / self.mass

    def rayleigh(self, psi, potential=None) -> float:
        """<(Delta + V) psi, psi> / <psi, psi> in the mass-weighted inner product."""
        psi = np.asarray(psi, dtype=float)
        num = psi @ (self.stiffness @ psi)
        if potential is not None:
            num += np.sum(self.mass * np.asarray(potential) * psi**2)
        return float(num / np.sum(self.mass * psi**2))


def _index(shape):
    return np.arange(int(np.prod(shape))).reshape(shape)


def laplacian_matrix(chart: ImmersionChart, grid: GridSpec) -> DiscreteOperator:
    """Symmetric positive semidefinite stiffness and diagonal mass for Delta on ``grid``."""
    for d, s in enumerate(grid.shape):
        if s < MIN_CELLS:
            raise GridTooCoarseError(f"coordinate {d} has {s} cells; at least {MIN_CELLS} are required")
    n = grid.ndim
    h = grid.spacing
    cell = float(np.prod(h))
    idx = _index(grid.shape)
    axes = grid.axes()
    U = grid.points()
    mass = volume_density(chart, U) * cell
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    # diagonal terms through faces a-1/2 .. a+1/2
    for a in range(n):
        lo_idx = idx
        hi_idx = np.roll(idx, -1, axis=a)
        face_axes = list(axes)
        face_axes[a] = axes[a] + 0.5 * h[a]
        F = np.stack([m.ravel() for m in np.meshgrid(*face_axes, indexing="ij")], axis=-1)
        g = chart.induced_metric(F)
        sqrtg = np.sqrt(np.clip(np.linalg.det(g), 0.0, None))
        ginv_aa = np.linalg.inv(g)[..., a, a] if n > 1 else 1.0 / g[..., 0, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(sqrtg > 0, sqrtg * ginv_aa, 0.0).reshape(grid.shape) * cell / h[a] ** 2
        if not grid.periodic[a]:
            sl = [slice(None)] * n
            sl[a] = -1
            coef[tuple(sl)] = 0.0  # outer boundary face: no flux
        add(lo_idx, lo_idx, coef)
        add(hi_idx, hi_idx, coef)
        add(lo_idx, hi_idx, -coef)
        add(hi_idx, lo_idx, -coef)

    # off-diagonal terms with centred differences at cell centres
    if n > 1:
        g = chart.induced_metric(U)
        ginv = np.linalg.inv(g)
        sqrtg = np.sqrt(np.clip(np.linalg.det(g), 0.0, None))
        D = [_centred_difference(grid, a) for a in range(n)]
        for a in range(n):
            for b in range(n):
                if a == b:
                    continue
                w = sqrtg * ginv[:, a, b] * cell
                if np.max(np.abs(w), initial=0.0) < 1e-14 * max(1.0, np.max(mass) / cell):
                    continue
                Kab = D[a].T @ sp.diags(w) @ D[b]
                Kab = Kab.tocoo()
                rows.append(Kab.row)
                cols.append(Kab.col)
                vals.append(Kab.data)

    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.size, grid.size))
    K = 0.5 * (K + K.T)
    return DiscreteOperator(grid, K.tocsr(), mass)


def _centred_difference(grid: GridSpec, a: int) -> sp.csr_matrix:
    """d/du_a at cell centres; one-sided at non-periodic ends."""
    idx = _index(grid.shape)
    h = grid.spacing[a]
    s = grid.shape[a]
    plus = np.roll(idx, -1, axis=a)
    minus = np.roll(idx, 1, axis=a)
    wp = np.full(grid.shape, 0.5 / h)
    wm = np.full(grid.shape, -0.5 / h)
    wc = np.zeros(grid.shape)
    if not grid.periodic[a]:
        first = [slice(None)] * grid.ndim
        last = [slice(None)] * grid.ndim
        first[a], last[a] = 0, s - 1
        first, last = tuple(first), tuple(last)
        wm[first], wc[first], wp[first] = 0.0, -1.0 / h, 1.0 / h
        wm[last], wc[last], wp[last] = -1.0 / h, 1.0 / h, 0.0
    r = np.concatenate([idx.ravel()] * 3)
    c = np.concatenate([plus.ravel(), minus.ravel(), idx.ravel()])
    v = np.concatenate([wp.ravel(), wm.ravel(), wc.ravel()])
    return sp.csr_matrix((v, (r, c)), shape=(grid.size, grid.size))


@dataclass(frozen=True)
class SpectralResult:
    value: float
    eigenfunction: np.ndarray
    residual: float
    converged: bool
    sign_definite: bool


def _lowest(K, mass, k, shift):
    M = sp.diags(mass).tocsc()
    v0 = np.ones(K.shape[0])
    # symmetric minimum-degree ordering keeps the factor of the shifted matrix small
    lu = splu((K - shift * M).tocsc(), permc_spec="MMD_AT_PLUS_A")
    OPinv = LinearOperator(K.shape, matvec=lu.solve, dtype=float)
    w, V = eigsh(K.tocsc(), k=k, M=M, sigma=shift, which="LM", v0=v0, tol=1e-12, maxiter=10_000,
                 OPinv=OPinv)
    order = np.argsort(w)
    return w[order], V[:, order]


def laplacian_eigenvalues(op: DiscreteOperator, k: int = 6) -> np.ndarray:
    """The k smallest eigenvalues of the discrete Laplacian (mass-weighted)."""
    w, _ = _lowest(op.stiffness, op.mass, k, -1.0)
    return w


def potential_values(potential, grid: GridSpec) -> np.ndarray:
    """Values of a PotentialField (or array) on ``grid``'s points."""
    vals = np.asarray(getattr(potential, "values", potential), dtype=float)
    if vals.shape != (grid.size,):
        raise ValueError(f"potential has {vals.size} values, grid has {grid.size} points")
    return vals


def schrodinger_lambda_min(op: DiscreteOperator, h) -> SpectralResult:
    """Bottom of the spectrum of Delta - 2h with its eigenfunction."""
    hv = potential_values(h, op.grid)
    V = -2.0 * hv
    A = op.stiffness + sp.diags(op.mass * V)
    shift = float(np.min(V)) - 1.0
    w, vecs = _lowest(A, op.mass, 1, shift)
    lam, psi = float(w[0]), vecs[:, 0]
    if np.sum(psi * op.mass) < 0:
        psi = -psi
    r = A @ psi - lam * op.mass * psi
    res = float(np.linalg.norm(r) / max(np.linalg.norm(op.mass * psi), 1e-300))
    scale = max(1.0, abs(lam))
    sign_def = bool(np.all(psi >= -1e-8 * np.max(np.abs(psi))))
    return SpectralResult(lam, psi, res, res < 1e-6 * scale, sign_def)


@dataclass(frozen=True)
class Verdict:
    positive: bool
    lambda_min: float
    tolerance: float
    residual: float
    converged: bool
    eigenfunction: np.ndarray | None = field(default=None, repr=False, compare=False)


def spectral_tolerance(h) -> float:
    hv = np.asarray(getattr(h, "values", h), dtype=float)
    return 1e-6 * max(1.0, 2.0 * float(np.max(np.abs(hv), initial=0.0)))


def positivity_verdict(op: DiscreteOperator, h, tol: float | None = None) -> Verdict:
    """Strict positivity of Delta - 2h on the grid: lambda_min must exceed the tolerance."""
    res = schrodinger_lambda_min(op, h)
    tol = spectral_tolerance(h) if tol is None else float(tol)
    return Verdict(bool(res.value > tol and res.converged), res.value, tol, res.residual, res.converged,
                   res.eigenfunction)


def eigenfunction_csv(op: DiscreteOperator, h, psi) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    P = op.grid.points()
    w.writerow([f"u{k + 1}" for k in range(P.shape[1])] + ["potential", "eigenfunction"])
    for u, hv, pv in zip(P, potential_values(h, op.grid), psi):
        w.writerow([repr(float(c)) for c in u] + [repr(float(hv)), repr(float(pv))])
    return buf.getvalue()


def gradient_field_laplacian(chart: ImmersionChart, f, x, s: float = 1e-3) -> np.ndarray:
    """-sum_i X^i(X^i f) at ambient points x of M, by second differences along X^i = P e_i.

    Curves are straight lines pulled back by the retraction; their
    acceleration is normal, and the tangential part of sum_i D_{X^i} X^i is
    zero, so the sum reproduces the Laplacian to O(s^2).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    P = _Geo(chart, x).P
    f0 = f(x)
    total = np.zeros(x.shape[0])
    for i in range(chart.m):
        X = P[:, :, i]
        total += (f(chart.retract(x + s * X)) - 2 * f0 + f(chart.retract(x - s * X))) / s**2
    return -total
