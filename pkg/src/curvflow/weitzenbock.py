"""Weitzenboeck curvature on Lambda^q, the potentials h_p^q and the pointwise vanishing margins.

Everything here is pointwise tensor algebra on the second fundamental form,
batched over leading axes. Frames are n x n orthogonal matrices whose
columns are tangent vectors written in the orthonormal frame of the
underlying ``FramedPoint``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .exterior import ExteriorDomainError, MultiVector, _index_table, delta2, derivation_extend, wedge_columns
from .frames import FrameResult, OptimizerSettings, haar_orthogonal, optimize_frames
from .geometry import (FundamentalForms, GeometryError, SphereRelativeForms, forms_batch, ricci_matrix,
                       sectional_curvature, shape_operators, sphere_relative_forms)
from .grid import local_refinement, quadrature_weights

UNIT_TOL = 1e-8
MINIMAL_TOL = 1e-8


class WeitzenboeckDomainError(ValueError):
    pass


@dataclass(frozen=True)
class FrameSelection:
    basis: np.ndarray
    q: int

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        n = B.shape[0]
        if B.shape != (n, n) or not 1 <= self.q <= n:
            raise WeitzenboeckDomainError(f"bad frame selection: shape {B.shape}, q={self.q}")
        if np.max(np.abs(B.T @ B - np.eye(n))) > 1e-10:
            raise WeitzenboeckDomainError("frame is not orthogonal to 1e-10")
        object.__setattr__(self, "basis", B)

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    def primitive(self) -> MultiVector:
        return MultiVector(self.q, self.n, wedge_columns(self.basis, self.q))


@dataclass
class PotentialField:
    """Scalar field sampled on a chart grid with Riemannian quadrature weights."""

    chart_name: str
    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("potential values must be finite")

    @property
    def volume(self) -> float:
        return float(np.sum(self.weights))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.points.shape[1]
        w.writerow([f"u{k + 1}" for k in range(d)] + ["weight", "value"])
        for u, wt, v in zip(self.points, self.weights, self.values):
            w.writerow([repr(float(c)) for c in u] + [repr(float(wt)), repr(float(v))])
        return buf.getvalue()


# ------------------------------------------------------------ frame sums


def rotate_alpha(alpha, O):
    """alpha in the frame given by the columns of O."""
    return np.einsum("...ija,...ip,...jr->...pra", alpha, O, O)


def _split_sums(alpha, O, q):
    """Sums over j <= q < l of <a_jj, a_ll> and |a_jl|^2."""
    a = rotate_alpha(alpha, O)
    diag = np.einsum("...iia->...ia", a)
    head = diag[..., :q, :]
    tail = diag[..., q:, :]
    cross = np.einsum("...ja,...la->...", head, tail)
    off = np.sum(a[..., :q, q:, :] ** 2, axis=(-3, -2, -1))
    return cross, off


def primitive_curvature_sum(alpha, O, q):
    """sum_{j<=q<l} K(v_j, v_l) via the Gauss equation, batched over frames."""
    cross, off = _split_sums(alpha, O, q)
    return cross - off


def lawson_simons_sum(form, O, q):
    """sum_{j<=q<l} (2|b_jl|^2 - <b_jj, b_ll>) for any normal-valued symmetric form."""
    cross, off = _split_sums(form, O, q)
    return 2.0 * off - cross


def weitzenbock_primitive(ff: FundamentalForms, sel: FrameSelection) -> float:
    """<R^q V, V> for V = v_1 ^ ... ^ v_q as a sum of q(n-q) sectional curvatures."""
    B = sel.basis
    return float(sum(sectional_curvature(ff, B[:, j], B[:, l])
                     for j in range(sel.q) for l in range(sel.q, sel.n)))


def weitzenbock_extrinsic(ff: FundamentalForms, sel: FrameSelection) -> float:
    return float(primitive_curvature_sum(ff.alpha, sel.basis, sel.q))


def _normal_vectors(ff, Z):
    if Z is None:
        return shape_operators(ff.alpha)
    Z = np.asarray(Z, dtype=float)
    return np.einsum("...ija,...ra->...rij", ff.alpha, Z)


def weitzenbock_operator(ff: FundamentalForms, q: int, Z=None) -> np.ndarray:
    """(R^q)* = dLambda^q(Ric) - sum_r delta^2 Lambda^q(A(., z_r)).

    ``Z`` optionally lists normal vectors z_r (rows, normal coordinates) with
    sum_r z_r z_r^T = I, e.g. the normal parts of the ambient basis; the
    default is the orthonormal frame normals.
    """
    A = _normal_vectors(ff, Z)
    Ric = ricci_matrix(ff.alpha)
    out = derivation_extend(Ric, q)
    if A.shape[-3]:
        out = out - np.sum(delta2(A, q), axis=-3)
    return out


def _check_primitive(V: MultiVector):
    if abs(V.norm() - 1.0) > UNIT_TOL:
        raise ExteriorDomainError(f"|V| = {V.norm():.12g}, expected a unit vector")
    if not is_decomposable(V):
        raise ExteriorDomainError("V is not decomposable")


def is_decomposable(V: MultiVector, tol: float = 1e-8) -> bool:
    """V != 0 is decomposable iff w -> w ^ V has an n-q dimensional range."""
    q, n = V.q, V.n
    if q <= 1 or q >= n - 1:
        return V.norm() > 0
    # matrix of w -> e_k ^ V into Lambda^{q+1}
    idx_q, _ = _index_table(q, n)
    _, pos1 = _index_table(q + 1, n)
    M = np.zeros((comb(n, q + 1), n))
    for c, I in enumerate(idx_q):
        if V.coords[c] == 0:
            continue
        for k in range(n):
            if k in I:
                continue
            J = tuple(sorted(I + (k,)))
            sign = (-1) ** sum(1 for i in I if i < k)
            M[pos1[J], k] += sign * V.coords[c]
    s = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return rank == n - q


def _hpq_parts(ff: FundamentalForms, q: int, Z=None):
    A = _normal_vectors(ff, Z)
    return derivation_extend(A, q), weitzenbock_operator(ff, q, Z)


def _hpq_value(Ms, R, V, p):
    MV = np.einsum("...aIJ,...J->...aI", Ms, V)
    quad = np.einsum("...aI,...I->...a", MV, V)
    return (np.sum(MV**2, axis=(-2, -1)) + (p - 2.0) * np.sum(quad**2, axis=-1)
            - np.einsum("...I,...IJ,...J->...", V, R, V))


def Hpq_form(ff: FundamentalForms, V: MultiVector, p: float, Z=None) -> float:
    """H_p^q(V, V) evaluated directly in the exterior algebra."""
    _check_primitive(V)
    if V.n != ff.n:
        raise ExteriorDomainError("V lives over the wrong dimension")
    Ms, R = _hpq_parts(ff, V.q, Z)
    return float(_hpq_value(Ms, R, V.coords, p))


# ----------------------------------------------------------- potentials


def _batch(ff):
    """View forms as a batch of points: alpha shape (G, n, n, k)."""
    alpha = np.asarray(ff.alpha)
    single = alpha.ndim == 3
    return (alpha[None] if single else alpha.reshape((-1,) + alpha.shape[-3:])), single


def _ric_eigenframe(alpha):
    w, U = np.linalg.eigh(ricci_matrix(alpha))
    return U


def _finish(res: FrameResult, single: bool) -> FrameResult:
    return res.item(0) if single else res


def _exact(values, frames, single):
    G = values.shape[0]
    return _finish(FrameResult(values, frames, np.ones(G, dtype=bool), np.zeros(G)), single)


def rhat0(ff: FundamentalForms, q: int, settings: OptimizerSettings = OptimizerSettings(),
          point_ids=None) -> FrameResult:
    """Infimum of <R^q V, V> over primitive unit V, with the achieving frame."""
    alpha, single = _batch(ff)
    G, n = alpha.shape[0], alpha.shape[1]
    if not 1 <= q <= n:
        raise WeitzenboeckDomainError(f"q={q} outside [1, {n}]")
    U = _ric_eigenframe(alpha)
    if q == n:
        return _exact(np.zeros(G), U, single)
    if q == 1 or q == n - 1:
        w = np.linalg.eigvalsh(ricci_matrix(alpha))[:, 0]
        if q == n - 1:  # the complementary vector carries the Ricci direction
            U = np.roll(U, -1, axis=-1)
        return _exact(w, U, single)

    def obj(O, own):
        return primitive_curvature_sum(alpha[own], O, q)

    res = optimize_frames(obj, n, G, settings, maximize=False, extra_starts=U, point_ids=point_ids)
    return _finish(res, single)


def hpq(ff: FundamentalForms, p: float, q: int, settings: OptimizerSettings = OptimizerSettings(),
        point_ids=None, Z=None) -> FrameResult:
    """h_p^q = sup over primitive unit V of (p/2) H_p^q(V, V), with the achieving frame."""
    alpha, single = _batch(ff)
    G, n = alpha.shape[0], alpha.shape[1]
    if not 1 <= q <= n:
        raise WeitzenboeckDomainError(f"q={q} outside [1, {n}]")
    flat = FundamentalForms.from_alpha(alpha)
    U = _ric_eigenframe(alpha)
    if p == 0:
        return _exact(np.zeros(G), U, single)
    Ms, R = _hpq_parts(flat, q, Z)
    if q == n:
        V = wedge_columns(np.broadcast_to(np.eye(n), (G, n, n)), q)
        return _exact(0.5 * p * _hpq_value(Ms, R, V, p), np.broadcast_to(np.eye(n), (G, n, n)).copy(), single)
    if q == 1 and p == 2:
        A = shape_operators(alpha)
        Q = np.sum(A @ A, axis=-3) - ricci_matrix(alpha)
        w, E = np.linalg.eigh(Q)
        return _exact(w[:, -1], E[..., ::-1], single)

    def obj(O, own):
        V = wedge_columns(O, q)
        return 0.5 * p * _hpq_value(Ms[own], R[own], V, p)

    res = optimize_frames(obj, n, G, settings, maximize=True, extra_starts=U, point_ids=point_ids)
    return _finish(res, single)


def hodge_potential(ff: FundamentalForms, q: int, settings: OptimizerSettings = OptimizerSettings(),
                        point_ids=None) -> np.ndarray:
    """R-hat_0^q - |alpha|^2/2 + (n/2)|H|^2, pointwise."""
    r = rhat0(ff, q, settings, point_ids)
    H2 = np.sum(np.asarray(ff.mean_curvature) ** 2, axis=-1)
    return np.asarray(r.value) - 0.5 * np.asarray(ff.hs_norm_sq) + 0.5 * ff.n * H2


def harmonic_map_potential(ff: FundamentalForms) -> np.ndarray:
    """Smallest eigenvalue of Ric - sum_a A_a^2."""
    A = shape_operators(ff.alpha)
    Q = ricci_matrix(ff.alpha) - np.sum(A @ A, axis=-3)
    return np.linalg.eigvalsh(Q)[..., 0]


# ------------------------------------------------------ sphere criteria


def _srf_batch(srf: SphereRelativeForms):
    beta = np.asarray(srf.beta)
    single = beta.ndim == 3
    if single:
        return beta[None], np.asarray(srf.alpha)[None], np.asarray(srf.nu)[None], True
    shp = beta.shape[-3:]
    return (beta.reshape((-1,) + shp), np.asarray(srf.alpha).reshape((-1,) + shp),
            np.asarray(srf.nu).reshape(-1, shp[-1]), False)


def lawson_simons_sup(srf: SphereRelativeForms, q: int, settings: OptimizerSettings = OptimizerSettings(),
                      point_ids=None) -> FrameResult:
    """sup over frames of sum_{j<=q<l} (2|b_jl|^2 - <b_jj, b_ll>)."""
    beta, _, _, single = _srf_batch(srf)
    G, n = beta.shape[0], beta.shape[1]
    if not 1 <= q <= n:
        raise WeitzenboeckDomainError(f"q={q} outside [1, {n}]")
    if q == n:
        return _exact(np.zeros(G), np.broadcast_to(np.eye(n), (G, n, n)).copy(), single)

    def obj(O, own):
        return lawson_simons_sum(beta[own], O, q)

    res = optimize_frames(obj, n, G, settings, maximize=True, point_ids=point_ids)
    return _finish(res, single)


def lawson_simons_margin(srf: SphereRelativeForms, q: int, settings: OptimizerSettings = OptimizerSettings(),
                         point_ids=None):
    """q(n-q) minus the Lawson-Simons frame supremum; positive means the pointwise criterion holds."""
    res = lawson_simons_sup(srf, q, settings, point_ids)
    n = np.asarray(srf.beta).shape[-2]
    return q * (n - q) - res.value


def identity_chain(srf: SphereRelativeForms, O, q) -> np.ndarray:
    """The successive expressions of the minimal-immersion rewriting at frames O.

    Returns shape (..., 6); on a minimal immersion into the unit sphere all
    six columns agree.
    """
    beta, alpha, _, single = _srf_batch(srf)
    O = np.asarray(O, dtype=float)
    n = beta.shape[1]
    b = rotate_alpha(beta if O.ndim == 2 else beta[:, None], O)
    a = rotate_alpha(alpha if O.ndim == 2 else alpha[:, None], O)
    ad = np.einsum("...iia->...ia", a)
    K = np.einsum("...ja,...la->...jl", ad, ad) - np.sum(a**2, axis=-1)
    bd = np.einsum("...iia->...ia", b)
    bb = np.einsum("...ja,...la->...jl", bd, bd)
    off = np.sum(b**2, axis=-1)
    J = (slice(None),) * (K.ndim - 2)
    blk = J + (slice(0, q), slice(q, n))
    s = lambda X: np.sum(X[blk], axis=(-2, -1))  # noqa: E731
    qq = q * (n - q)
    head = np.sum(bd[..., :q, :], axis=-2)
    tail = np.sum(bd[..., q:, :], axis=-2)
    out = np.stack([
        s(2 * off - bb),
        s(-K + 1 + off),
        qq + s(off - K),
        qq + s(1 + bb - 2 * K),
        2 * qq - 2 * s(K) + np.sum(head * tail, axis=-1),
        2 * qq - 2 * s(K) - np.sum(head**2, axis=-1),
    ], axis=-1)
    return out[0] if single else out


def minimal_sphere_margin(srf: SphereRelativeForms, q: int, settings: OptimizerSettings = OptimizerSettings(),
                     point_ids=None, check_frames: int = 16, seed: int = 0):
    """(inf over frames of sum K(v_j, v_l)) - q(n-q)/2 for a minimal immersion into S^N.

    Returns (margin, chain_residual), where chain_residual is the largest
    spread of the identity chain over ``check_frames`` random frames per point.
    """
    beta, alpha, nu, single = _srf_batch(srf)
    G, n = beta.shape[0], beta.shape[1]
    mean = np.einsum("...iia->...a", beta) / n
    dev = float(np.max(np.linalg.norm(mean, axis=-1)))
    if dev > MINIMAL_TOL:
        raise GeometryError(f"immersion is not minimal in the sphere (|H| = {dev:.3g})")
    ff = FundamentalForms.from_alpha(alpha)
    inf = rhat0(ff, q, settings, point_ids)
    margin = np.asarray(inf.value) - 0.5 * q * (n - q)
    rng = np.random.default_rng(seed)
    O = haar_orthogonal(rng, n, (G, check_frames))
    chain = identity_chain(SphereRelativeForms(alpha, beta, nu), O, q)
    resid = float(np.max(np.ptp(chain, axis=-1)))
    return (float(margin[0]) if single else margin), resid


# -------------------------------------------------------- field helpers


def negative_part_norm(field: PotentialField, w: float, exponent: float | None = None) -> float:
    """(sum weight * |min(value - w, 0)|^e)^(1/e), e defaulting to n/2."""
    e = exponent if exponent is not None else field.points.shape[1] / 2.0
    neg = np.minimum(field.values - w, 0.0)
    return float(np.sum(field.weights * np.abs(neg) ** e) ** (1.0 / e))


# ------------------------------------------------------ fields over M

FIELD_KINDS = ("rhat0", "hpq", "thm5A", "thm5F", "lawson_simons", "thm5E")


def evaluate_field(chart, kind: str, U, p: float = 1.0, q: int = 1,
                   settings: OptimizerSettings = OptimizerSettings(), point_ids=None) -> np.ndarray:
    """Pointwise values of a curvature potential at parameter points U (G, n).

    ``thm5A``, ``thm5F``, ``lawson_simons`` and ``thm5E`` are the potentials V of
    the criteria "Delta + V > 0"; ``rhat0`` and ``hpq`` are the raw quantities.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    fp, ff = forms_batch(chart, U)
    if kind == "rhat0":
        return np.asarray(rhat0(ff, q, settings, point_ids).value)
    if kind == "hpq":
        return np.asarray(hpq(ff, p, q, settings, point_ids).value)
    if kind == "thm5A":
        return hodge_potential(ff, q, settings, point_ids)
    if kind == "thm5F":
        return harmonic_map_potential(ff)
    if kind in ("lawson_simons", "thm5E"):
        if not chart.in_unit_sphere:
            raise GeometryError(f"{chart.name} is not immersed in the unit sphere")
        srf = sphere_relative_forms(chart, fp, ff)
        if kind == "lawson_simons":
            return np.asarray(lawson_simons_margin(srf, q, settings, point_ids))
        margin, resid = minimal_sphere_margin(srf, q, settings, point_ids)
        if resid > 1e-8:
            raise GeometryError(f"identity chain for the minimal-immersion rewriting fails (spread {resid:.3g})")
        return np.asarray(margin)
    raise ValueError(f"unknown field kind {kind!r}; expected one of {FIELD_KINDS}")


def potential_field(chart, grid, kind: str, p: float = 1.0, q: int = 1,
                    settings: OptimizerSettings = OptimizerSettings()) -> PotentialField:
    U = grid.points()
    vals = evaluate_field(chart, kind, U, p, q, settings, point_ids=np.arange(len(U)))
    return PotentialField(chart.name, U, quadrature_weights(chart, grid), vals,
                          {"kind": kind, "p": float(p), "q": int(q)})


def refined_extremum(chart, grid, field: PotentialField, mode: str = "min",
                     settings: OptimizerSettings = OptimizerSettings()):
    """Grid extremum followed by one local refinement pass around the extremal cell."""
    vals = field.values
    k = int(np.argmin(vals) if mode == "min" else np.argmax(vals))
    P = local_refinement(grid, field.points[k])
    meta = field.meta
    ids = len(vals) + np.arange(len(P))
    local = evaluate_field(chart, meta["kind"], P, meta.get("p", 1.0), meta.get("q", 1), settings, ids)
    pick = np.min if mode == "min" else np.max
    best = float(pick(np.concatenate([[vals[k]], local])))
    return best, field.points[k]
