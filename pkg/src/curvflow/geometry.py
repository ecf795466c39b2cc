"""Pointwise extrinsic geometry of immersions f: U subset R^n -> R^m.

All frame data uses rows as vectors: ``tangent[i]`` is v_i and
``normal[a]`` is nu_a, both in ambient coordinates. Second fundamental form
arrays are indexed ``alpha[..., i, j, a] = <alpha(v_i, v_j), nu_a>``, and
every function here accepts leading batch dimensions where that is natural.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

RANK_TOL = 1e-8
ORTHO_TOL = 1e-8


class GeometryError(ValueError):
    pass


class DegenerateChartError(GeometryError):
    pass


class UndefinedPlaneError(GeometryError):
    pass


@dataclass(frozen=True)
class Implicit:
    """M as a regular level set {F = 0}, F: R^m -> R^c, for ambient-side geometry.

    ``values(x)``, ``gradients(x)`` and ``hessians(x)`` are batched over the
    leading axes of x and return shapes (..., c), (..., c, m), (..., c, m, m).
    """

    values: Callable
    gradients: Callable
    hessians: Callable


@dataclass(frozen=True, eq=False)
class ImmersionChart:
    """Parametrized immersion with a periodic-box parameter domain.

    Missing ``jac``/``hess`` suppliers fall back to central differences with
    step ``1e-4 * scale``.
    """

    n: int
    m: int
    bounds: np.ndarray
    periodic: tuple
    f: Callable
    jac: Optional[Callable] = None
    hess: Optional[Callable] = None
    retract: Optional[Callable] = None
    locate: Optional[Callable] = None
    implicit: Optional[Implicit] = None
    metric: Optional[Callable] = None
    name: str = "chart"
    descriptor: dict = field(default_factory=dict)
    in_unit_sphere: bool = False

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float).reshape(self.n, 2)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if len(self.periodic) != self.n:
            raise GeometryError("one periodicity flag per parameter is required")

    @property
    def scale(self) -> float:
        return float(np.max(self.bounds[:, 1] - self.bounds[:, 0]))

    @property
    def fd_step(self) -> float:
        return 1e-4 * self.scale

    @property
    def analytic(self) -> bool:
        return self.jac is not None and self.hess is not None

    def eval(self, u) -> np.ndarray:
        return np.asarray(self.f(np.asarray(u, dtype=float)), dtype=float)

    def jacobian(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.jac is not None:
            return np.asarray(self.jac(u), dtype=float)
        h = self.fd_step
        cols = []
        for a in range(self.n):
            e = np.zeros(self.n)
            e[a] = h
            cols.append((self.eval(u + e) - self.eval(u - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def hessian(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.hess is not None:
            return np.asarray(self.hess(u), dtype=float)
        h = self.fd_step
        slabs = []
        for a in range(self.n):
            e = np.zeros(self.n)
            e[a] = h
            slabs.append((self.jacobian(u + e) - self.jacobian(u - e)) / (2 * h))
        # slabs[a][..., k, b] = d_a d_b f_k
        H = np.stack(slabs, axis=-2)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def induced_metric(self, u) -> np.ndarray:
        J = self.jacobian(u)
        return np.swapaxes(J, -1, -2) @ J


@dataclass(frozen=True)
class FramedPoint:
    u: np.ndarray
    x: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True)
class FundamentalForms:
    alpha: np.ndarray
    mean_curvature: np.ndarray
    hs_norm_sq: np.ndarray

    @classmethod
    def from_alpha(cls, alpha) -> "FundamentalForms":
        alpha = np.asarray(alpha, dtype=float)
        n = alpha.shape[-2]
        trace = np.einsum("...iia->...a", alpha)
        return cls(alpha, trace / n, np.sum(alpha**2, axis=(-3, -2, -1)))

    @property
    def n(self) -> int:
        return self.alpha.shape[-2]

    @property
    def codim(self) -> int:
        return self.alpha.shape[-1]


# ---------------------------------------------------------------- frames


def _positive_qr(J: np.ndarray) -> np.ndarray:
    """Gram-Schmidt of the columns of J (..., m, n), returned as rows (..., n, m)."""
    Q, R = np.linalg.qr(J)
    s = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    s = np.where(s == 0, 1.0, s)
    return np.swapaxes(Q * s[..., None, :], -1, -2)


def complete_normals(tangent: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Orthonormal normal frame from projected ambient basis vectors, in order.

    Deterministic: e_1, e_2, ... are projected off the tangent space and the
    normals found so far, and kept when the residual exceeds ``tol``.
    """
    tangent = np.asarray(tangent, dtype=float)
    batch = tangent.shape[:-2]
    n, m = tangent.shape[-2:]
    k = m - n
    T = tangent.reshape(-1, n, m)
    B = T.shape[0]
    N = np.zeros((B, max(k, 0), m))
    count = np.zeros(B, dtype=int)
    for e in range(m):
        if k == 0:
            break
        v = np.zeros((B, m))
        v[:, e] = 1.0
        for _ in range(2):  # second pass for numerical orthogonality
            v = v - np.einsum("bi,bim->bm", np.einsum("bim,bm->bi", T, v), T)
            v = v - np.einsum("ba,bam->bm", np.einsum("bam,bm->ba", N, v), N)
        r = np.linalg.norm(v, axis=-1)
        take = (r > tol) & (count < k)
        rows = np.nonzero(take)[0]
        N[rows, count[rows]] = v[rows] / r[rows, None]
        count[rows] += 1
    if np.any(count < k):
        raise DegenerateChartError("could not complete the normal frame")
    return N.reshape(batch + (max(k, 0), m))


def frame_at(chart: ImmersionChart, u) -> FramedPoint:
    """Orthonormal tangent frame (Gram-Schmidt of jacobian columns) and normal completion."""
    u = np.asarray(u, dtype=float)
    x = chart.eval(u)
    J = chart.jacobian(u)
    sv = np.linalg.svd(J, compute_uv=False)
    if np.min(sv[..., -1]) < RANK_TOL:
        raise DegenerateChartError(f"jacobian rank deficient at u={u} (sigma_min={np.min(sv[..., -1]):.3g})")
    T = _positive_qr(J)
    N = complete_normals(T)
    return FramedPoint(u, x, T, N)


def fundamental_forms(chart: ImmersionChart, fp: FramedPoint) -> FundamentalForms:
    """Second fundamental form in the frame of ``fp``.

    The orthonormal v_i are pulled back to parameter coordinates
    c_i = J^+ v_i, so alpha(v_i, v_j) = normal part of sum c_i^a c_j^b d_ab f.
    """
    J = chart.jacobian(fp.u)
    H = chart.hessian(fp.u)
    C = np.linalg.pinv(J) @ np.swapaxes(fp.tangent, -1, -2)  # (..., n_param, n_frame)
    D2 = np.einsum("...kab,...ai,...bj->...ijk", H, C, C)
    alpha = np.einsum("...ijk,...ak->...ija", D2, fp.normal)
    alpha = 0.5 * (alpha + np.swapaxes(alpha, -2, -3))
    return FundamentalForms.from_alpha(alpha)


def shape_operator(ff: FundamentalForms, w) -> np.ndarray:
    """A(., w) in the tangent frame, w in normal coordinates."""
    return np.einsum("...ija,...a->...ij", ff.alpha, np.asarray(w, dtype=float))


def shape_operators(alpha: np.ndarray) -> np.ndarray:
    """A_a = A(., nu_a) for every frame normal, shape (..., codim, n, n)."""
    return np.moveaxis(np.asarray(alpha), -1, -3)


def ricci_matrix(alpha: np.ndarray) -> np.ndarray:
    """Ric^# from the Gauss equation: sum_a trace(A_a) A_a - A_a^2."""
    A = shape_operators(alpha)
    tr = np.trace(A, axis1=-2, axis2=-1)
    return np.sum(tr[..., None, None] * A - A @ A, axis=-3)


def _bilinear(alpha, a, b):
    return np.einsum("...ija,...i,...j->...a", alpha, a, b)


def _orthonormal_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < ORTHO_TOL or nb < ORTHO_TOL:
        raise UndefinedPlaneError("zero vector does not span a plane")
    cos = abs(a @ b) / (na * nb)
    if cos > 1 - 1e-12:
        raise UndefinedPlaneError("vectors are parallel")
    if abs(na - 1) > ORTHO_TOL or abs(nb - 1) > ORTHO_TOL or abs(a @ b) > ORTHO_TOL:
        raise GeometryError("sectional_curvature expects an orthonormal pair")
    a = a / na
    b = b - (a @ b) * a
    return a, b / np.linalg.norm(b)


def sectional_curvature(ff: FundamentalForms, a, b) -> float:
    """K(a, b) = <alpha(a,a), alpha(b,b)> - |alpha(a,b)|^2 (Gauss equation)."""
    a, b = _orthonormal_pair(a, b)
    aa = _bilinear(ff.alpha, a, a)
    bb = _bilinear(ff.alpha, b, b)
    ab = _bilinear(ff.alpha, a, b)
    return float(aa @ bb - ab @ ab)


def ricci_quadratic(ff: FundamentalForms, a, completion=None) -> float:
    """<Ric^# a, a> as the sum of K(a, v_l) over an orthonormal completion of a."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if completion is None:
        M = np.column_stack([a, np.eye(n)])
        Q = _positive_qr(M[:, :n])  # rows; first row is +a
        completion = Q[1:]
    return float(sum(sectional_curvature(ff, a, v) for v in completion))


def gradient_fields(chart: ImmersionChart, fp: FramedPoint):
    """X^i = P e_i (rows of the returned array) and the tangent projection P."""
    P = np.swapaxes(fp.tangent, -1, -2) @ fp.tangent
    return P.copy(), P


def frames_batch(chart: ImmersionChart, U) -> FramedPoint:
    """frame_at over a stack of parameter points (G, n)."""
    return frame_at(chart, np.asarray(U, dtype=float))


def forms_batch(chart: ImmersionChart, U):
    fp = frames_batch(chart, U)
    return fp, fundamental_forms(chart, fp)


# ------------------------------------------------- ambient-side geometry


def implicit_frame(chart: ImmersionChart, x):
    """Normal frame and tangent projector at ambient points on M, from the level set."""
    G = chart.implicit.gradients(x)  # (..., c, m)
    Qn, _ = np.linalg.qr(np.swapaxes(G, -1, -2))  # (..., m, c)
    P = np.eye(chart.m) - Qn @ np.swapaxes(Qn, -1, -2)
    return np.swapaxes(Qn, -1, -2), P


def implicit_alpha(chart: ImmersionChart, x, v, w):
    """Ambient alpha(v, w) at x on M for tangent v, w (batched)."""
    G = chart.implicit.gradients(x)
    Hc = chart.implicit.hessians(x)
    quad = np.einsum("...m,...cmn,...n->...c", v, Hc, w)
    lam = np.linalg.solve(G @ np.swapaxes(G, -1, -2), quad[..., None])[..., 0]
    return -np.einsum("...cm,...c->...m", G, lam)


# ------------------------------------------------------ sphere immersions


@dataclass(frozen=True)
class SphereRelativeForms:
    """alpha (in R^{N+1}), beta (in S^N) and the outward normal nu, all in frame normal coordinates."""

    alpha: np.ndarray
    beta: np.ndarray
    nu: np.ndarray

    @property
    def beta_mean(self) -> np.ndarray:
        n = self.beta.shape[-2]
        return np.einsum("...iia->...a", self.beta) / n


def compose_into_ambient(chart: ImmersionChart, samples: int = 64, seed: int = 0) -> ImmersionChart:
    """Validate that ``chart`` maps into the unit sphere S^N and mark it as such.

    The returned chart is the same map viewed in R^{N+1}; use
    ``sphere_relative_forms`` for (alpha, beta, nu) at a framed point.
    """
    rng = np.random.default_rng(seed)
    lo, hi = chart.bounds[:, 0], chart.bounds[:, 1]
    pad = 1e-3 * (hi - lo)
    U = rng.uniform(lo + pad, hi - pad, size=(samples, chart.n))
    r = np.linalg.norm(chart.eval(U), axis=-1)
    if np.max(np.abs(r - 1.0)) > 1e-10:
        raise GeometryError(f"image is not on the unit sphere (max ||f|-1| = {np.max(np.abs(r - 1)):.3g})")
    if chart.in_unit_sphere:
        return chart
    return _replace(chart, in_unit_sphere=True)


def _replace(chart: ImmersionChart, **kw) -> ImmersionChart:
    return dataclasses.replace(chart, **kw)


def sphere_relative_forms(chart: ImmersionChart, fp: FramedPoint, ff: FundamentalForms | None = None,
                          check: bool = True) -> SphereRelativeForms:
    """beta(v, w) = alpha(v, w) + <v, w> nu with nu = x the outward normal of S^N."""
    if not chart.in_unit_sphere:
        raise GeometryError("chart is not marked as immersed in the unit sphere")
    if ff is None:
        ff = fundamental_forms(chart, fp)
    nu = np.einsum("...am,...m->...a", fp.normal, fp.x)
    n = ff.n
    beta = ff.alpha + np.eye(n)[..., None] * nu[..., None, None, :]
    if check:
        resid = np.max(np.abs(np.einsum("...ija,...a->...ij", beta, nu)), initial=0.0)
        if resid > 1e-8:
            raise GeometryError(f"beta not tangent to the sphere (residual {resid:.3g})")
    return SphereRelativeForms(ff.alpha, beta, nu)


# ------------------------------------------ intrinsic (Christoffel) route


def christoffel(chart: ImmersionChart, u) -> np.ndarray:
    """Gamma^c_ab = g^{cd} <d_ab f, d_d f> of the induced metric."""
    J = chart.jacobian(u)
    H = chart.hessian(u)
    g = J.T @ J
    lowered = np.einsum("kab,kd->dab", H, J)
    return np.linalg.solve(g, lowered.reshape(chart.n, -1)).reshape(chart.n, chart.n, chart.n)


def riemann_lowered(chart: ImmersionChart, u, h: float | None = None) -> np.ndarray:
    """R_{abcd} = <R(d_a, d_b) d_c, d_d> from the metric alone (differenced Christoffels).

    Christoffel derivatives use the fourth-order five-point stencil; the
    default step is larger when the Christoffels themselves come from
    differenced hessians, whose rounding noise would otherwise dominate.
    """
    u = np.asarray(u, dtype=float)
    n = chart.n
    h = h or (2e-5 if chart.analytic else 1e-3) * chart.scale
    G = christoffel(chart, u)
    dG = np.zeros((n, n, n, n))  # dG[e, c, a, b] = d_e Gamma^c_ab
    for e in range(n):
        s = np.zeros(n)
        s[e] = h
        dG[e] = (8 * (christoffel(chart, u + s) - christoffel(chart, u - s))
                 - (christoffel(chart, u + 2 * s) - christoffel(chart, u - 2 * s))) / (12 * h)
    # R^d_{c a b} for R(d_a, d_b) d_c
    Rup = (np.einsum("adbc->dcab", dG) - np.einsum("bdac->dcab", dG)
           + np.einsum("dae,ebc->dcab", G, G) - np.einsum("dbe,eac->dcab", G, G))
    g = chart.induced_metric(u)
    return np.einsum("dcab,df->abcf", Rup, g)


def intrinsic_sectional_curvature(chart: ImmersionChart, u, a, b, fp: FramedPoint | None = None) -> float:
    """K(a, b) for frame-coordinate vectors a, b, using only the induced metric."""
    fp = fp or frame_at(chart, u)
    a, b = _orthonormal_pair(a, b)
    J = chart.jacobian(fp.u)
    Jp = np.linalg.pinv(J)
    ca = Jp @ (a @ fp.tangent)
    cb = Jp @ (b @ fp.tangent)
    R = riemann_lowered(chart, fp.u)
    return float(np.einsum("abcd,a,b,c,d->", R, ca, cb, cb, ca))
